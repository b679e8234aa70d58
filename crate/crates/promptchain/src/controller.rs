//! The chain controller: image embedding in, per-step mixing weights out.
//!
//! linear -> relu -> linear -> sigmoid, so every lambda lies strictly inside
//! (0, 1) and the blending recursion always forms a proper convex
//! combination. The fixed schedule is the ablation stand-in: one constant for
//! every step and every instance, carrying no gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoders::EncoderDims;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Trainable controller producing one lambda per chain step.
#[derive(Debug, Clone)]
pub struct ChainController {
    pub w1: ParamId, // [hidden, joint]
    pub b1: ParamId, // [hidden]
    pub w2: ParamId, // [n, hidden]
    pub b2: ParamId, // [n]
    chain_length: usize,
}

impl ChainController {
    pub fn init(chain_length: usize, dims: EncoderDims, seed: u64, params: &mut ParamSet) -> Result<Self> {
        if chain_length < 1 {
            return Err(Error::Config("controller needs chain length >= 1".into()));
        }
        dims.validate()?;
        let hidden = dims.hidden();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal1 = Normal::new(0.0, (1.0 / dims.joint as f64).sqrt()).expect("positive std");
        let w1_data: Vec<f64> = (0..hidden * dims.joint).map(|_| normal1.sample(&mut rng)).collect();
        let normal2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("positive std");
        let w2_data: Vec<f64> = (0..chain_length * hidden).map(|_| normal2.sample(&mut rng)).collect();
        Ok(ChainController {
            w1: params.insert("controller.w1", Tensor::new(vec![hidden, dims.joint], w1_data)?),
            b1: params.insert("controller.b1", Tensor::zeros(vec![hidden])),
            w2: params.insert("controller.w2", Tensor::new(vec![chain_length, hidden], w2_data)?),
            b2: params.insert("controller.b2", Tensor::zeros(vec![chain_length])),
            chain_length,
        })
    }

    pub fn chain_length(&self) -> usize {
        self.chain_length
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Number of trainable values in a controller of this shape.
    pub fn parameter_count(dims: EncoderDims, chain_length: usize) -> usize {
        let hidden = dims.hidden();
        dims.joint * hidden + hidden + hidden * chain_length + chain_length
    }

    /// sigmoid(layer2(relu(layer1(v)))): an [n] node of per-step lambdas.
    pub fn forward(&self, graph: &mut Graph, params: &ParamSet, v: NodeId) -> Result<NodeId> {
        let w1 = graph.param(params, self.w1)?;
        let b1 = graph.param(params, self.b1)?;
        let hidden = graph.linear(w1, v, b1)?;
        let hidden = graph.relu(hidden)?;
        let w2 = graph.param(params, self.w2)?;
        let b2 = graph.param(params, self.b2)?;
        let out = graph.linear(w2, hidden, b2)?;
        graph.sigmoid(out)
    }
}

/// A fixed or dynamically produced set of per-step lambdas.
#[derive(Debug, Clone)]
pub struct LambdaSchedule {
    pub values: Vec<f64>,
}

/// Constant schedule: every step uses `c`, for every instance.
pub fn fixed_lambdas(c: f64, chain_length: usize) -> Result<LambdaSchedule> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Config(format!(
            "fixed chain weight must lie strictly in (0, 1), got {c}"
        )));
    }
    Ok(LambdaSchedule {
        values: vec![c; chain_length],
    })
}
