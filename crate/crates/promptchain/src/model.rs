//! The full classifier: frozen encoders, prompt chain, meta-net chain, and
//! chain controller composed into one forward pass.
//!
//! Per instance the pipeline is: embed the image; derive the per-step lambdas
//! (controller, fixed schedule, or none); derive the per-step biases from the
//! meta-nets; encode every (step, class) prompt sentence; run the blending
//! recursion; pick the prediction embedding; score classes by cosine
//! similarity over temperature; softmax.

use crate::controller::ChainController;
use crate::encoders::{ClassVocabulary, EncoderDims, FrozenEncoders};
use crate::error::{Error, Result};
use crate::graph::{softmax, Graph, NodeId};
use crate::meta_net::MetaNetChain;
use crate::prompt_chain::{chain_embeddings, ChainState, PredictionMode, PromptChain};
use crate::tensor::{ParamSet, Tensor};

/// Where the per-step mixing weights come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    /// Trainable controller conditioned on the image embedding.
    Dynamic,
    /// Constant schedule, non-trainable.
    Fixed(f64),
    /// No chain at all; only valid with average prediction (the
    /// parallel-prompt baseline).
    Absent,
}

impl LambdaSpec {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "dynamic" => Ok(LambdaSpec::Dynamic),
            "none" => Ok(LambdaSpec::Absent),
            other => {
                if let Some(c) = other.strip_prefix("fixed:") {
                    let c: f64 = c
                        .parse()
                        .map_err(|_| Error::Config(format!("bad fixed chain weight in '{other}'")))?;
                    if !(c > 0.0 && c < 1.0) {
                        return Err(Error::Config(format!(
                            "fixed chain weight must lie strictly in (0, 1), got {c}"
                        )));
                    }
                    Ok(LambdaSpec::Fixed(c))
                } else {
                    Err(Error::Config(format!(
                        "unknown lambda mode '{other}' (expected dynamic, fixed:<c>, or none)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for LambdaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaSpec::Dynamic => write!(f, "dynamic"),
            LambdaSpec::Fixed(c) => write!(f, "fixed:{c}"),
            LambdaSpec::Absent => write!(f, "none"),
        }
    }
}

/// Everything needed to construct a model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dims: EncoderDims,
    pub classes: usize,
    pub class_tokens: usize,
    pub chain_length: usize,
    pub prompt_length: usize,
    pub temperature: f64,
    pub prediction: PredictionMode,
    pub lambda: LambdaSpec,
    pub chained_meta_nets: bool,
}

/// Seeds for each seeded component.
#[derive(Debug, Clone, Copy)]
pub struct ModelSeeds {
    pub encoders: u64,
    pub vocab: u64,
    pub prompts: u64,
    pub meta_nets: u64,
    pub controller: u64,
}

/// Resolved lambda source held by a model.
#[derive(Debug, Clone)]
pub enum LambdaKind {
    Dynamic(ChainController),
    Fixed(f64),
    Absent,
}

impl LambdaKind {
    pub fn spec(&self) -> LambdaSpec {
        match self {
            LambdaKind::Dynamic(_) => LambdaSpec::Dynamic,
            LambdaKind::Fixed(c) => LambdaSpec::Fixed(*c),
            LambdaKind::Absent => LambdaSpec::Absent,
        }
    }
}

/// One classifier over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct CotModel {
    pub params: ParamSet,
    pub encoders: FrozenEncoders,
    pub vocab: ClassVocabulary,
    pub prompts: PromptChain,
    pub meta: MetaNetChain,
    pub lambda: LambdaKind,
    temperature: f64,
    prediction: PredictionMode,
}

/// Outcome of one scored instance.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probabilities: Tensor,
    /// Index into the candidate class list, lowest index on ties.
    pub predicted: usize,
    /// Max probability over the candidates.
    pub confidence: f64,
    pub correct: Option<bool>,
}

/// Nodes of interest from one forward pass.
pub struct ForwardPass {
    pub image_embedding: Tensor,
    pub logits: NodeId,
    pub logit_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Per step: max over candidate classes of cos(step embedding, image
    /// embedding). Only filled when requested.
    pub step_similarities: Vec<f64>,
}

impl CotModel {
    pub fn build(spec: &ModelSpec, seeds: &ModelSeeds) -> Result<Self> {
        spec.dims.validate()?;
        spec.prediction.validate(spec.chain_length)?;
        if !(spec.temperature > 0.0) || !spec.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be a positive real, got {}",
                spec.temperature
            )));
        }
        if matches!(spec.lambda, LambdaSpec::Absent) && spec.prediction != PredictionMode::Average {
            return Err(Error::Config(
                "a lambda source is required unless prediction mode is 'average'".into(),
            ));
        }
        if let LambdaSpec::Fixed(c) = spec.lambda {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::Config(format!(
                    "fixed chain weight must lie strictly in (0, 1), got {c}"
                )));
            }
        }

        let encoders = FrozenEncoders::build(seeds.encoders, spec.dims)?;
        let vocab = ClassVocabulary::build(seeds.vocab, spec.classes, spec.class_tokens, spec.dims.token)?;
        let mut params = ParamSet::new();
        let prompts = PromptChain::init(
            spec.chain_length,
            spec.prompt_length,
            spec.dims.token,
            seeds.prompts,
            &mut params,
        )?;
        let meta = MetaNetChain::init(
            spec.chain_length,
            spec.dims,
            spec.chained_meta_nets,
            seeds.meta_nets,
            &mut params,
        )?;
        let lambda = match spec.lambda {
            LambdaSpec::Dynamic => LambdaKind::Dynamic(ChainController::init(
                spec.chain_length,
                spec.dims,
                seeds.controller,
                &mut params,
            )?),
            LambdaSpec::Fixed(c) => LambdaKind::Fixed(c),
            LambdaSpec::Absent => LambdaKind::Absent,
        };
        Ok(CotModel {
            params,
            encoders,
            vocab,
            prompts,
            meta,
            lambda,
            temperature: spec.temperature,
            prediction: spec.prediction,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: f64) -> Result<()> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be a positive real, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(())
    }

    pub fn prediction_mode(&self) -> PredictionMode {
        self.prediction
    }

    pub fn chain_length(&self) -> usize {
        self.prompts.chain_length()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params.trainable_value_count()
    }

    /// Hashes of everything that must never change during training.
    pub fn frozen_hashes(&self) -> (String, String) {
        (self.encoders.content_hash(), self.vocab.content_hash())
    }

    fn validate_classes(&self, classes: &[usize]) -> Result<()> {
        if classes.len() < 2 {
            return Err(Error::contract(
                "class_probabilities",
                format!("need at least 2 candidate classes, got {}", classes.len()),
            ));
        }
        for &c in classes {
            if c >= self.vocab.num_classes() {
                return Err(Error::IndexOutOfRange {
                    op: "class_probabilities",
                    index: c,
                    len: self.vocab.num_classes(),
                });
            }
        }
        Ok(())
    }

    /// Builds the forward graph for one image over a candidate class list.
    pub fn forward(
        &self,
        graph: &mut Graph,
        image_feature: &Tensor,
        classes: &[usize],
        with_trajectory: bool,
    ) -> Result<ForwardPass> {
        self.forward_with(&self.params, graph, image_feature, classes, with_trajectory)
    }

    /// `forward` with explicit parameter storage; the gradient checker moves
    /// the parameters out of the model and drives this directly.
    pub fn forward_with(
        &self,
        params: &ParamSet,
        graph: &mut Graph,
        image_feature: &Tensor,
        classes: &[usize],
        with_trajectory: bool,
    ) -> Result<ForwardPass> {
        self.validate_classes(classes)?;
        let n = self.prompts.chain_length();

        let v = self.encoders.encode_image(image_feature)?;
        let v_node = graph.constant_tensor(&v)?;

        // Per-step mixing weights.
        let lambda_nodes: Option<Vec<NodeId>> = match &self.lambda {
            LambdaKind::Dynamic(ctrl) => {
                let out = ctrl.forward(graph, params, v_node)?;
                let mut nodes = Vec::with_capacity(n);
                for j in 0..n {
                    nodes.push(graph.gather(out, j)?);
                }
                Some(nodes)
            }
            LambdaKind::Fixed(c) => {
                let mut nodes = Vec::with_capacity(n);
                for _ in 0..n {
                    nodes.push(graph.constant_scalar(*c)?);
                }
                Some(nodes)
            }
            LambdaKind::Absent => None,
        };

        // Per-step visual biases and per-(step, class) text embeddings.
        let biases = self.meta.chain_biases(graph, params, v_node)?;
        let mut raw: Vec<Vec<NodeId>> = Vec::with_capacity(n);
        for step in 0..n {
            let mut row = Vec::with_capacity(classes.len());
            for &class in classes {
                let tokens = self.prompts.assemble_step_tokens(
                    graph,
                    params,
                    step,
                    class,
                    &self.vocab,
                    biases[step],
                )?;
                row.push(self.encoders.encode_text(graph, &tokens)?);
            }
            raw.push(row);
        }

        let state: Option<ChainState> = match &lambda_nodes {
            Some(nodes) => Some(chain_embeddings(graph, &raw, nodes)?),
            None => None,
        };

        // Prediction embedding per class.
        let prediction_nodes: Vec<NodeId> = match self.prediction {
            PredictionMode::Final => {
                let state = state.as_ref().expect("final prediction requires a chain");
                state.chained.last().expect("nonempty chain").clone()
            }
            PredictionMode::Average => {
                let mut out = Vec::with_capacity(classes.len());
                for i in 0..classes.len() {
                    let per_step: Vec<NodeId> = raw.iter().map(|row| row[i]).collect();
                    out.push(graph.mean_stack(&per_step)?);
                }
                out
            }
            PredictionMode::ConcatK(k) => {
                let mut out = Vec::with_capacity(classes.len());
                for &class in classes {
                    let tokens = self.prompts.concat_step_tokens(
                        graph,
                        params,
                        k,
                        class,
                        &self.vocab,
                        &biases,
                    )?;
                    out.push(self.encoders.encode_text(graph, &tokens)?);
                }
                out
            }
        };

        // Cosine over temperature, stacked into one logit vector.
        let inv_tau = 1.0 / self.temperature;
        let mut logit_nodes = Vec::with_capacity(classes.len());
        for &e in &prediction_nodes {
            let cos = graph.cosine(e, v_node)?;
            logit_nodes.push(graph.scale(cos, inv_tau)?);
        }
        let logits = graph.stack(&logit_nodes)?;
        let logit_values = graph.value(logits).to_vec();

        let step_similarities = if with_trajectory {
            let step_rows: &Vec<Vec<NodeId>> = match &state {
                Some(s) => &s.chained,
                None => &raw,
            };
            let mut sims = Vec::with_capacity(n);
            for row in step_rows {
                let mut best = f64::NEG_INFINITY;
                for &e in row {
                    let cos = graph.cosine(e, v_node)?;
                    best = best.max(graph.scalar_value(cos));
                }
                sims.push(best);
            }
            sims
        } else {
            Vec::new()
        };

        Ok(ForwardPass {
            image_embedding: v,
            logits,
            logit_values,
            lambdas: state.map(|s| s.lambdas).unwrap_or_default(),
            step_similarities,
        })
    }

    /// Class distribution for one image over the candidate list.
    pub fn class_probabilities(&self, image_feature: &Tensor, classes: &[usize]) -> Result<Tensor> {
        let mut graph = Graph::new();
        let pass = self.forward(&mut graph, image_feature, classes, false)?;
        Tensor::vector(softmax(&pass.logit_values))
    }

    /// Cross-entropy loss node for training; `label` indexes into `classes`.
    pub fn loss_graph(
        &self,
        graph: &mut Graph,
        image_feature: &Tensor,
        classes: &[usize],
        label: usize,
    ) -> Result<(NodeId, Tensor)> {
        let pass = self.forward(graph, image_feature, classes, false)?;
        graph.softmax_cross_entropy(pass.logits, label)
    }

    /// `loss_graph` with explicit parameter storage.
    pub fn loss_graph_with(
        &self,
        params: &ParamSet,
        graph: &mut Graph,
        image_feature: &Tensor,
        classes: &[usize],
        label: usize,
    ) -> Result<(NodeId, Tensor)> {
        let pass = self.forward_with(params, graph, image_feature, classes, false)?;
        graph.softmax_cross_entropy(pass.logits, label)
    }

    /// One training evaluation: builds the graph, runs backward, accumulates
    /// gradients onto the trainable parameters, and returns the loss value.
    pub fn instance_loss(&mut self, image_feature: &Tensor, classes: &[usize], label: usize) -> Result<f64> {
        let mut graph = Graph::new();
        let (loss, _) = self.loss_graph(&mut graph, image_feature, classes, label)?;
        graph.backward(loss)?;
        graph.accumulate_grads(&mut self.params)?;
        Ok(graph.scalar_value(loss))
    }

    /// Argmax prediction with lowest-index tie-break.
    pub fn predict(
        &self,
        image_feature: &Tensor,
        classes: &[usize],
        label: Option<usize>,
    ) -> Result<Prediction> {
        let probabilities = self.class_probabilities(image_feature, classes)?;
        Ok(prediction_from_probabilities(probabilities, label))
    }

    /// Prediction plus the per-step similarity trajectory; the evaluation
    /// path.
    pub fn evaluate_instance(
        &self,
        image_feature: &Tensor,
        classes: &[usize],
        label: Option<usize>,
    ) -> Result<(Prediction, Vec<f64>)> {
        let mut graph = Graph::new();
        let pass = self.forward(&mut graph, image_feature, classes, true)?;
        let probabilities = Tensor::vector(softmax(&pass.logit_values))?;
        Ok((
            prediction_from_probabilities(probabilities, label),
            pass.step_similarities,
        ))
    }
}

/// Checks every trainable coordinate of the model against central finite
/// differences of the instance loss. The parameters are temporarily moved out
/// of the model so the checker can perturb them while the model provides the
/// wiring.
pub fn grad_check_model(
    model: &mut CotModel,
    image_feature: &Tensor,
    classes: &[usize],
    label: usize,
    step: f64,
    tolerance: f64,
) -> Result<crate::gradcheck::GradCheckReport> {
    let mut params = std::mem::take(&mut model.params);
    let wiring: &CotModel = model;
    let result = crate::gradcheck::grad_check(
        &mut params,
        |params, compute| {
            let mut graph = Graph::new();
            let (loss, _) = wiring.loss_graph_with(params, &mut graph, image_feature, classes, label)?;
            if compute {
                graph.backward(loss)?;
                graph.accumulate_grads(params)?;
            }
            Ok(graph.scalar_value(loss))
        },
        step,
        tolerance,
    );
    model.params = params;
    result
}

fn prediction_from_probabilities(probabilities: Tensor, label: Option<usize>) -> Prediction {
    let mut predicted = 0;
    let mut confidence = f64::NEG_INFINITY;
    for (i, &p) in probabilities.data().iter().enumerate() {
        if p > confidence {
            confidence = p;
            predicted = i;
        }
    }
    Prediction {
        probabilities,
        predicted,
        confidence,
        correct: label.map(|l| l == predicted),
    }
}
