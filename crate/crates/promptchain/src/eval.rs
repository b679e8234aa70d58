//! The evaluation protocols and report assembly.
//!
//! base_to_new scores base-class test instances among the base classes and
//! new-class test instances among the new classes, reporting both accuracies
//! and their harmonic mean. transfer re-scores the base test set under a
//! feature-space shift. retrieval and vqa reuse the split machinery over
//! caption- and question-answer-style vocabularies; retrieval reports R@1,
//! which in this classification framing is overall top-1 accuracy.

use crate::error::{Error, Result};
use crate::metrics::{harmonic_mean, ConfidenceStats, ConfusionMatrix, MetricsReport};
use crate::model::CotModel;
use crate::task::{Dataset, Instance, ShiftSpec, TaskStyle};

/// Which evaluation to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    BaseToNew,
    Transfer(ShiftSpec),
    Retrieval,
    Vqa,
}

impl Protocol {
    /// Parses a CLI protocol name; `transfer` picks up the shift from the
    /// task configuration.
    pub fn parse(text: &str, shift: ShiftSpec) -> Result<Self> {
        match text {
            "base_to_new" => Ok(Protocol::BaseToNew),
            "transfer" => Ok(Protocol::Transfer(shift)),
            "retrieval" => Ok(Protocol::Retrieval),
            "vqa" => Ok(Protocol::Vqa),
            other => Err(Error::Config(format!(
                "unknown protocol '{other}' (expected base_to_new, transfer, retrieval, or vqa)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::BaseToNew => "base_to_new",
            Protocol::Transfer(_) => "transfer",
            Protocol::Retrieval => "retrieval",
            Protocol::Vqa => "vqa",
        }
    }

    fn required_style(&self) -> TaskStyle {
        match self {
            Protocol::BaseToNew | Protocol::Transfer(_) => TaskStyle::Classification,
            Protocol::Retrieval => TaskStyle::Retrieval,
            Protocol::Vqa => TaskStyle::Vqa,
        }
    }
}

/// Run identity carried into the report.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
}

struct PhaseAccumulator {
    confusion: ConfusionMatrix,
    confidence: ConfidenceStats,
    similarity_sums: Vec<f64>,
    instances_seen: u64,
}

impl PhaseAccumulator {
    fn new(classes: usize, chain_length: usize) -> Self {
        PhaseAccumulator {
            confusion: ConfusionMatrix::new(classes),
            confidence: ConfidenceStats::default(),
            similarity_sums: vec![0.0; chain_length],
            instances_seen: 0,
        }
    }

    fn mean_similarity(&self) -> Vec<f64> {
        if self.instances_seen == 0 {
            return vec![0.0; self.similarity_sums.len()];
        }
        self.similarity_sums
            .iter()
            .map(|s| s / self.instances_seen as f64)
            .collect()
    }
}

/// Scores `instances` among `class_set`; every instance's class must belong
/// to the candidate set.
fn run_phase(
    model: &CotModel,
    instances: &[Instance],
    class_set: &[usize],
    acc: &mut PhaseAccumulator,
) -> Result<(u64, u64)> {
    let mut correct = 0u64;
    for instance in instances {
        let label = class_set
            .iter()
            .position(|&c| c == instance.class)
            .ok_or_else(|| {
                Error::Config(format!(
                    "protocol/dataset mismatch: instance class {} not in the scored class set",
                    instance.class
                ))
            })?;
        let (prediction, sims) = model.evaluate_instance(&instance.feature, class_set, Some(label))?;
        let predicted_class = class_set[prediction.predicted];
        acc.confusion.record(instance.class, predicted_class);
        let is_correct = prediction.correct.expect("label was provided");
        acc.confidence.record(prediction.confidence, is_correct);
        for (slot, s) in acc.similarity_sums.iter_mut().zip(&sims) {
            *slot += s;
        }
        acc.instances_seen += 1;
        if is_correct {
            correct += 1;
        }
    }
    Ok((correct, instances.len() as u64))
}

/// Plain accuracy of the model on a set of instances over a class set.
pub fn accuracy_on(model: &CotModel, instances: &[Instance], class_set: &[usize]) -> Result<f64> {
    let mut acc = PhaseAccumulator::new(model.vocab.num_classes(), model.chain_length());
    let (correct, total) = run_phase(model, instances, class_set, &mut acc)?;
    if total == 0 {
        return Err(Error::Config("no instances to evaluate".into()));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Runs one protocol and assembles the metrics report.
pub fn evaluate(
    model: &CotModel,
    data: &Dataset,
    protocol: &Protocol,
    meta: &RunMeta,
) -> Result<MetricsReport> {
    if model.vocab.num_classes() != data.classes {
        return Err(Error::Config(format!(
            "protocol/dataset mismatch: model vocabulary has {} classes, dataset has {}",
            model.vocab.num_classes(),
            data.classes
        )));
    }
    let required = protocol.required_style();
    if data.style != required {
        return Err(Error::Config(format!(
            "protocol/dataset mismatch: protocol '{}' needs a {} task, dataset style is {}",
            protocol.name(),
            required,
            data.style
        )));
    }

    let start = std::time::Instant::now();
    let mut acc = PhaseAccumulator::new(data.classes, model.chain_length());

    let (base_accuracy, new_accuracy) = match protocol {
        Protocol::Transfer(shift) => {
            let shifted = data.shifted_test_base(shift)?;
            let (correct, total) = run_phase(model, &shifted, &data.base_classes, &mut acc)?;
            if total == 0 {
                return Err(Error::Config("transfer evaluation has no test instances".into()));
            }
            (100.0 * correct as f64 / total as f64, None)
        }
        _ => {
            let (base_correct, base_total) =
                run_phase(model, &data.test_base, &data.base_classes, &mut acc)?;
            let (new_correct, new_total) =
                run_phase(model, &data.test_new, &data.new_classes, &mut acc)?;
            if base_total == 0 || new_total == 0 {
                return Err(Error::Config(
                    "base-to-new evaluation needs test instances for both splits".into(),
                ));
            }
            (
                100.0 * base_correct as f64 / base_total as f64,
                Some(100.0 * new_correct as f64 / new_total as f64),
            )
        }
    };

    // H is defined for positive accuracies; a zero side pins it to the
    // zero-accuracy limit.
    let h = new_accuracy.map(|new| {
        if base_accuracy > 0.0 && new > 0.0 {
            harmonic_mean(base_accuracy, new).expect("both sides positive")
        } else {
            0.0
        }
    });

    let r_at_1 = match protocol {
        Protocol::Retrieval => Some(acc.confusion.accuracy_percent()),
        _ => None,
    };

    Ok(MetricsReport {
        protocol: protocol.name().to_string(),
        variant: meta.variant.clone(),
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
        classes: data.classes,
        lambda_mode: model.lambda.spec().to_string(),
        lambda_first_step_unused: !matches!(model.lambda, crate::model::LambdaKind::Absent),
        trainable_parameters: model.trainable_parameter_count(),
        train_exposure_new_classes: data.train_exposure_to_new_classes(),
        base_accuracy,
        new_accuracy,
        harmonic_mean: h,
        r_at_1,
        confusion: acc.confusion.clone(),
        confidence: acc.confidence.clone(),
        step_similarity: acc.mean_similarity(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
