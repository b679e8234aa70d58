//! Plain stochastic gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

/// SGD hyperparameters. No momentum, no weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.002,
            epochs: 10,
            batch_size: 1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be a positive real, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be a positive integer".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be a positive integer".into()));
        }
        Ok(())
    }
}

/// Applies `p <- p - lr * grad` to every trainable parameter and clears the
/// gradients. Frozen parameters are untouched. Calling this before a backward
/// pass populated the gradients is a contract violation.
pub fn sgd_step(params: &mut ParamSet, config: &SgdConfig) -> Result<()> {
    let lr = config.learning_rate;
    for id in params.trainable_ids() {
        let tensor = params.get_mut(id);
        let grad = match tensor.grad() {
            Some(g) => g.to_vec(),
            None => {
                return Err(Error::contract(
                    "sgd_step",
                    "parameter has no gradient; run backward first",
                ))
            }
        };
        for (p, g) in tensor.data_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        tensor.clear_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn step_applies_update_and_clears_grad() {
        let mut params = ParamSet::new();
        let p = params.insert("p", Tensor::vector(vec![1.0]).unwrap());
        params.get_mut(p).accumulate_grad(&[2.0]).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.5,
            ..SgdConfig::default()
        };
        sgd_step(&mut params, &cfg).unwrap();
        assert_eq!(params.get(p).data(), &[0.0]);
        assert!(params.get(p).grad().is_none());
    }

    #[test]
    fn frozen_tensor_is_unchanged() {
        let mut params = ParamSet::new();
        let frozen = params.insert_frozen("w", Tensor::vector(vec![4.0]).unwrap());
        let live = params.insert("p", Tensor::vector(vec![1.0]).unwrap());
        params.get_mut(live).accumulate_grad(&[1.0]).unwrap();
        sgd_step(&mut params, &SgdConfig::default()).unwrap();
        assert_eq!(params.get(frozen).data(), &[4.0]);
    }

    #[test]
    fn step_before_backward_is_a_contract_error() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::vector(vec![1.0]).unwrap());
        assert!(matches!(
            sgd_step(&mut params, &SgdConfig::default()),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn two_steps_on_convex_quadratic_reduce_loss_monotonically() {
        // loss(p) = sum((p - c)^2) around c = (1, -2)
        let target = [1.0, -2.0];
        let mut params = ParamSet::new();
        let p = params.insert("p", Tensor::vector(vec![3.0, 3.0]).unwrap());
        let cfg = SgdConfig {
            learning_rate: 0.1,
            ..SgdConfig::default()
        };

        let eval = |params: &ParamSet, with_grads: bool, store: &mut Option<Graph>| -> f64 {
            let mut g = Graph::new();
            let x = g.param(params, p).unwrap();
            let c = g.constant(&[2], &target).unwrap();
            let neg_c = g.scale(c, -1.0).unwrap();
            let d = g.add(x, neg_c).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq).unwrap();
            if with_grads {
                g.backward(loss).unwrap();
            }
            let value = g.scalar_value(loss);
            *store = Some(g);
            value
        };

        let mut losses = Vec::new();
        let mut graph = None;
        losses.push(eval(&params, false, &mut graph));
        for _ in 0..2 {
            let mut g_store = None;
            eval(&params, true, &mut g_store);
            g_store.unwrap().accumulate_grads(&mut params).unwrap();
            sgd_step(&mut params, &cfg).unwrap();
            losses.push(eval(&params, false, &mut graph));
        }
        assert!(losses[1] < losses[0] && losses[2] < losses[1], "{losses:?}");
    }
}
