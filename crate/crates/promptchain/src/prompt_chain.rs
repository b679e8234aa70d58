//! The chain of learnable prompts and the convex blending recursion.
//!
//! A chain holds N prompts of L context tokens each. Per step, the context
//! tokens get an instance-specific bias added before the class tokens are
//! appended and the whole sequence is text-encoded. Step embeddings are then
//! blended recursively: step 1 passes through unchanged, and every later step
//! mixes its own embedding with the previous chained value using a weight
//! lambda in (0, 1).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoders::ClassVocabulary;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Which per-class embedding the classifier uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMode {
    /// The last chained embedding; the default.
    Final,
    /// Elementwise mean of the raw per-step embeddings (parallel-prompt
    /// baseline; ignores the chain).
    Average,
    /// Re-encode the concatenated token sequences of the last k steps.
    ConcatK(usize),
}

impl PredictionMode {
    pub fn validate(&self, chain_length: usize) -> Result<()> {
        if let PredictionMode::ConcatK(k) = self {
            if *k < 1 || *k > chain_length {
                return Err(Error::Config(format!(
                    "concat prediction needs 1 <= k <= chain length ({chain_length}), got {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "final" => Ok(PredictionMode::Final),
            "average" => Ok(PredictionMode::Average),
            other => {
                if let Some(k) = other.strip_prefix("concat:") {
                    let k: usize = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad concat count in prediction mode '{other}'")))?;
                    Ok(PredictionMode::ConcatK(k))
                } else {
                    Err(Error::Config(format!(
                        "unknown prediction mode '{other}' (expected final, average, or concat:<k>)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictionMode::Final => write!(f, "final"),
            PredictionMode::Average => write!(f, "average"),
            PredictionMode::ConcatK(k) => write!(f, "concat:{k}"),
        }
    }
}

/// N learnable prompts of L context tokens each.
#[derive(Debug, Clone)]
pub struct PromptChain {
    token_dim: usize,
    tokens: Vec<Vec<ParamId>>, // [step][token]
}

impl PromptChain {
    /// All prompts start from one shared seeded draw (N(0, 0.02^2) per
    /// coordinate), mirroring identical-phrase initialization; training is
    /// what makes them diverge.
    pub fn init(
        chain_length: usize,
        prompt_length: usize,
        token_dim: usize,
        seed: u64,
        params: &mut ParamSet,
    ) -> Result<Self> {
        if chain_length < 1 || prompt_length < 1 || token_dim < 1 {
            return Err(Error::Config(format!(
                "prompt chain needs chain_length, prompt_length, token_dim >= 1, got {chain_length}/{prompt_length}/{token_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("positive std");
        let shared: Vec<Vec<f64>> = (0..prompt_length)
            .map(|_| (0..token_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();

        let mut tokens = Vec::with_capacity(chain_length);
        for step in 0..chain_length {
            let mut step_tokens = Vec::with_capacity(prompt_length);
            for (t, values) in shared.iter().enumerate() {
                let tensor = Tensor::new(vec![token_dim], values.clone())?;
                step_tokens.push(params.insert(format!("prompt{step}.token{t}"), tensor));
            }
            tokens.push(step_tokens);
        }
        Ok(PromptChain { token_dim, tokens })
    }

    pub fn chain_length(&self) -> usize {
        self.tokens.len()
    }

    pub fn prompt_length(&self) -> usize {
        self.tokens[0].len()
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.tokens.iter().flatten().copied()
    }

    /// Bias-shifted context tokens of one step followed by the class tokens.
    /// The bias is broadcast onto every context token; class tokens stay
    /// untouched.
    pub fn assemble_step_tokens(
        &self,
        graph: &mut Graph,
        params: &ParamSet,
        step: usize,
        class: usize,
        vocab: &ClassVocabulary,
        bias: NodeId,
    ) -> Result<Vec<NodeId>> {
        if step >= self.tokens.len() {
            return Err(Error::IndexOutOfRange {
                op: "assemble_step_tokens",
                index: step,
                len: self.tokens.len(),
            });
        }
        let bias_shape = graph.shape(bias).to_vec();
        if bias_shape != [self.token_dim] {
            return Err(Error::dimension(
                "assemble_step_tokens",
                format!("bias [{}]", self.token_dim),
                format!("bias {bias_shape:?}"),
            ));
        }
        let mut out = Vec::with_capacity(self.prompt_length() + vocab.tokens_per_class());
        for &token_id in &self.tokens[step] {
            let token = graph.param(params, token_id)?;
            out.push(graph.add(token, bias)?);
        }
        for class_token in vocab.class_tokens(class)? {
            out.push(graph.constant_tensor(class_token)?);
        }
        Ok(out)
    }

    /// Token sequence for concatenated prediction: the biased context tokens
    /// of the last `k` steps in chain order, then one copy of the class
    /// tokens.
    pub fn concat_step_tokens(
        &self,
        graph: &mut Graph,
        params: &ParamSet,
        k: usize,
        class: usize,
        vocab: &ClassVocabulary,
        biases: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let n = self.chain_length();
        if k < 1 || k > n {
            return Err(Error::Config(format!(
                "concat prediction needs 1 <= k <= chain length ({n}), got {k}"
            )));
        }
        if biases.len() != n {
            return Err(Error::dimension(
                "concat_step_tokens",
                format!("{n} biases"),
                format!("{} biases", biases.len()),
            ));
        }
        let mut out = Vec::new();
        for step in (n - k)..n {
            for &token_id in &self.tokens[step] {
                let token = graph.param(params, token_id)?;
                out.push(graph.add(token, biases[step])?);
            }
        }
        for class_token in vocab.class_tokens(class)? {
            out.push(graph.constant_tensor(class_token)?);
        }
        Ok(out)
    }
}

/// Raw and chained per-step, per-class embeddings plus the lambdas used.
#[derive(Debug, Clone)]
pub struct ChainState {
    /// raw[step][class]: encoder output of each step in isolation.
    pub raw: Vec<Vec<NodeId>>,
    /// chained[step][class]: the blending recursion.
    pub chained: Vec<Vec<NodeId>>,
    /// Lambda values used this pass (index 0 is produced but unused).
    pub lambdas: Vec<f64>,
}

/// Runs the blending recursion over per-step embeddings.
///
/// chained[0] = raw[0]; for j >= 1,
/// chained[j] = (1 - lambda[j]) * chained[j-1] + lambda[j] * raw[j].
/// lambda[0] is accepted and ignored so callers can pass one lambda per step.
pub fn chain_embeddings(
    graph: &mut Graph,
    raw: &[Vec<NodeId>],
    lambda_nodes: &[NodeId],
) -> Result<ChainState> {
    if raw.is_empty() {
        return Err(Error::contract("chain_embeddings", "no steps"));
    }
    if lambda_nodes.len() != raw.len() {
        return Err(Error::dimension(
            "chain_embeddings",
            format!("{} lambdas", raw.len()),
            format!("{} lambdas", lambda_nodes.len()),
        ));
    }
    let classes = raw[0].len();
    for step in raw {
        if step.len() != classes {
            return Err(Error::dimension(
                "chain_embeddings",
                format!("{classes} classes per step"),
                format!("{} classes", step.len()),
            ));
        }
    }
    let mut lambdas = Vec::with_capacity(lambda_nodes.len());
    for &l in lambda_nodes {
        let value = graph.scalar_value(l);
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::contract(
                "chain_embeddings",
                format!("lambda must lie in [0, 1], got {value}"),
            ));
        }
        lambdas.push(value);
    }

    let mut chained: Vec<Vec<NodeId>> = vec![raw[0].clone()];
    for j in 1..raw.len() {
        let keep = graph.one_minus(lambda_nodes[j])?;
        let mut step = Vec::with_capacity(classes);
        for i in 0..classes {
            let carried = graph.scale_by(chained[j - 1][i], keep)?;
            let fresh = graph.scale_by(raw[j][i], lambda_nodes[j])?;
            step.push(graph.add(carried, fresh)?);
        }
        chained.push(step);
    }
    Ok(ChainState {
        raw: raw.to_vec(),
        chained,
        lambdas,
    })
}

impl ChainState {
    /// Per-class prediction embedding for the `Final` and `Average` modes.
    /// Concatenated prediction re-encodes token sequences and therefore lives
    /// with the model forward, not here.
    pub fn prediction_embedding(&self, graph: &mut Graph, mode: PredictionMode) -> Result<Vec<NodeId>> {
        match mode {
            PredictionMode::Final => Ok(self.chained.last().expect("nonempty chain").clone()),
            PredictionMode::Average => {
                let classes = self.raw[0].len();
                let mut out = Vec::with_capacity(classes);
                for i in 0..classes {
                    let per_step: Vec<NodeId> = self.raw.iter().map(|step| step[i]).collect();
                    out.push(graph.mean_stack(&per_step)?);
                }
                Ok(out)
            }
            PredictionMode::ConcatK(_) => Err(Error::contract(
                "prediction_embedding",
                "concatenated prediction re-encodes tokens; use the model forward",
            )),
        }
    }
}

/// Expands the recursion into per-step convex weights: chained[N-1] equals
/// sum_j w[j] * raw[j] with the returned w. The weights are nonnegative and
/// sum to one.
pub fn unrolled_weights(lambdas: &[f64]) -> Vec<f64> {
    let n = lambdas.len();
    let mut weights = vec![0.0; n];
    if n == 0 {
        return weights;
    }
    for j in 0..n {
        let own = if j == 0 { 1.0 } else { lambdas[j] };
        let carry: f64 = ((j + 1)..n).map(|k| 1.0 - lambdas[k]).product();
        weights[j] = own * carry;
    }
    weights
}
