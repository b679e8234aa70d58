//! Instance-at-a-time training over the base-class split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::CotModel;
use crate::optim::{sgd_step, SgdConfig};
use crate::task::Dataset;
use crate::tensor::ParamSet;

/// Loss trace and step count from one training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Mean instance loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains on the base-class training split. Each epoch reshuffles with a
/// seed derived as `shuffle_seed + epoch`, so runs are deterministic without
/// repeating one order. The frozen encoder and vocabulary hashes are checked
/// before and after; a mismatch aborts.
pub fn train(
    model: &mut CotModel,
    data: &Dataset,
    config: &SgdConfig,
    shuffle_seed: u64,
) -> Result<TrainResult> {
    // Config files demand a positive rate; the loop itself also admits the
    // degenerate null update (lr = 0), which must leave parameters untouched.
    if !(config.learning_rate >= 0.0) || !config.learning_rate.is_finite() {
        return Err(Error::Config(format!(
            "learning_rate must be a nonnegative real, got {}",
            config.learning_rate
        )));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    if data.train.is_empty() {
        return Err(Error::Config("dataset has no training instances".into()));
    }
    let frozen_before = model.frozen_hashes();
    let classes = data.base_classes.clone();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut in_batch = 0usize;
        for (step_in_epoch, &idx) in order.iter().enumerate() {
            let instance = &data.train[idx];
            let label = classes
                .iter()
                .position(|&c| c == instance.class)
                .expect("training instances come from base classes");
            let loss = model
                .instance_loss(&instance.feature, &classes, label)
                .map_err(|e| {
                    Error::contract(
                        "train",
                        format!("epoch {epoch} step {step_in_epoch}: {e}"),
                    )
                })?;
            if !loss.is_finite() {
                return Err(Error::contract(
                    "train",
                    format!("epoch {epoch} step {step_in_epoch}: non-finite loss"),
                ));
            }
            epoch_loss += loss;
            steps += 1;
            in_batch += 1;
            if in_batch == config.batch_size {
                flush_batch(&mut model.params, config, in_batch)?;
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            flush_batch(&mut model.params, config, in_batch)?;
        }
        epoch_losses.push(epoch_loss / order.len() as f64);
    }

    if model.frozen_hashes() != frozen_before {
        return Err(Error::contract(
            "train",
            "frozen encoder or vocabulary weights changed during training",
        ));
    }
    Ok(TrainResult { epoch_losses, steps })
}

fn flush_batch(params: &mut ParamSet, config: &SgdConfig, batch_len: usize) -> Result<()> {
    params.scale_grads(1.0 / batch_len as f64);
    sgd_step(params, config)
}
