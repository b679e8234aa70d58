//! The ablation runner: trains and evaluates wiring variants under shared
//! seeds and one task, then emits a comparative CSV, a delta table against
//! the default wiring, and a parameter-count audit.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::controller::ChainController;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Protocol, RunMeta};
use crate::metrics::MetricsReport;
use crate::model::{CotModel, LambdaSpec, ModelSpec};
use crate::prompt_chain::PredictionMode;
use crate::report;
use crate::task::{generate_task, TaskStyle};
use crate::train::{train, TrainResult};

/// Which ablation family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    ChainLength,
    AverageBaseline,
    FixedChain,
    UnchainedMetaNets,
    ConcatK,
    PromptLength,
    All,
}

impl AblationKind {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "chain_length" => Ok(AblationKind::ChainLength),
            "average_baseline" => Ok(AblationKind::AverageBaseline),
            "fixed_chain" => Ok(AblationKind::FixedChain),
            "unchained_metanets" => Ok(AblationKind::UnchainedMetaNets),
            "concat_k" => Ok(AblationKind::ConcatK),
            "prompt_length" => Ok(AblationKind::PromptLength),
            "all" => Ok(AblationKind::All),
            other => Err(Error::Config(format!(
                "unknown ablation kind '{other}' (expected chain_length, average_baseline, \
                 fixed_chain, unchained_metanets, concat_k, prompt_length, or all)"
            ))),
        }
    }
}

/// One trained and evaluated variant.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub name: String,
    pub report: MetricsReport,
    pub train: TrainResult,
}

/// Trainable-parameter comparison between the n-chain and the n-average
/// baseline. The two differ only in the controller, so the measured delta
/// must equal the controller's parameter count exactly.
#[derive(Debug, Clone)]
pub struct ParamAudit {
    pub chain_length: usize,
    pub chain_params: usize,
    pub average_params: usize,
    pub measured_delta: usize,
    pub predicted_delta: usize,
}

impl ParamAudit {
    pub fn matches(&self) -> bool {
        self.measured_delta == self.predicted_delta
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub variants: Vec<VariantOutcome>,
    pub audits: Vec<ParamAudit>,
}

fn average_baseline_spec(base: &ModelSpec, n: usize) -> ModelSpec {
    let mut spec = base.clone();
    spec.chain_length = n;
    spec.prediction = PredictionMode::Average;
    spec.lambda = LambdaSpec::Absent;
    spec.chained_meta_nets = false;
    spec
}

fn chain_spec(base: &ModelSpec, n: usize) -> ModelSpec {
    let mut spec = base.clone();
    spec.chain_length = n;
    spec.prediction = PredictionMode::Final;
    spec.lambda = LambdaSpec::Dynamic;
    spec.chained_meta_nets = true;
    spec
}

fn variant_specs(kind: AblationKind, base: &ModelSpec) -> Vec<(String, ModelSpec)> {
    let mut out = Vec::new();
    match kind {
        AblationKind::ChainLength => {
            for n in 1..=5 {
                out.push((format!("chain_length_{n}"), chain_spec(base, n)));
            }
        }
        AblationKind::AverageBaseline => {
            for n in 3..=5 {
                out.push((format!("average_baseline_{n}"), average_baseline_spec(base, n)));
            }
        }
        AblationKind::FixedChain => {
            for c in [0.5, 0.7] {
                let mut spec = base.clone();
                spec.lambda = LambdaSpec::Fixed(c);
                out.push((format!("fixed_chain_{c}"), spec));
            }
        }
        AblationKind::UnchainedMetaNets => {
            let mut spec = base.clone();
            spec.chained_meta_nets = false;
            out.push(("unchained_metanets".to_string(), spec));
        }
        AblationKind::ConcatK => {
            for k in [2, 3] {
                let mut spec = base.clone();
                spec.prediction = PredictionMode::ConcatK(k);
                out.push((format!("concat_{k}"), spec));
            }
        }
        AblationKind::PromptLength => {
            for l in [4, 8, 16] {
                let mut spec = base.clone();
                spec.prompt_length = l;
                out.push((format!("prompt_length_{l}"), spec));
            }
        }
        AblationKind::All => {
            for sub in [
                AblationKind::ChainLength,
                AblationKind::AverageBaseline,
                AblationKind::FixedChain,
                AblationKind::UnchainedMetaNets,
                AblationKind::ConcatK,
                AblationKind::PromptLength,
            ] {
                out.extend(variant_specs(sub, base));
            }
        }
    }
    out
}

fn audits_for(kind: AblationKind, base: &ModelSpec) -> Result<Vec<ParamAudit>> {
    if !matches!(kind, AblationKind::AverageBaseline | AblationKind::All) {
        return Ok(Vec::new());
    }
    let mut audits = Vec::new();
    for n in 3..=5 {
        let chain_model = CotModel::build(
            &chain_spec(base, n),
            &crate::model::ModelSeeds {
                encoders: 1,
                vocab: 2,
                prompts: 3,
                meta_nets: 4,
                controller: 5,
            },
        )?;
        let average_model = CotModel::build(
            &average_baseline_spec(base, n),
            &crate::model::ModelSeeds {
                encoders: 1,
                vocab: 2,
                prompts: 3,
                meta_nets: 4,
                controller: 5,
            },
        )?;
        let chain_params = chain_model.trainable_parameter_count();
        let average_params = average_model.trainable_parameter_count();
        audits.push(ParamAudit {
            chain_length: n,
            chain_params,
            average_params,
            measured_delta: chain_params - average_params,
            predicted_delta: ChainController::parameter_count(base.dims, n),
        });
    }
    Ok(audits)
}

/// Trains and evaluates every variant of `kind` plus the default wiring,
/// sharing the task and all seeds.
pub fn run_ablation(kind: AblationKind, config: &ExperimentConfig) -> Result<AblationOutcome> {
    let seeds = config.run_seeds();
    let task_spec = config.task_spec()?;
    let data = generate_task(&task_spec, config.dims().image_feature, seeds.task)?;
    let protocol = match task_spec.style {
        TaskStyle::Classification => Protocol::BaseToNew,
        TaskStyle::Retrieval => Protocol::Retrieval,
        TaskStyle::Vqa => Protocol::Vqa,
    };
    let base_spec = config.model_spec()?;
    let config_hash = config.config_hash();

    let mut specs = vec![("default".to_string(), base_spec.clone())];
    specs.extend(variant_specs(kind, &base_spec));

    let mut variants = Vec::with_capacity(specs.len());
    for (name, spec) in specs {
        let mut model = CotModel::build(&spec, &seeds.model)?;
        let train_result = train(&mut model, &data, &config.training, seeds.shuffle)?;
        let meta = RunMeta {
            variant: name.clone(),
            seed: config.seed,
            config_hash: config_hash.clone(),
        };
        let report = evaluate(&model, &data, &protocol, &meta)?;
        variants.push(VariantOutcome {
            name,
            report,
            train: train_result,
        });
    }

    Ok(AblationOutcome {
        variants,
        audits: audits_for(kind, &base_spec)?,
    })
}

/// The delta table against the default variant plus the parameter audit.
pub fn delta_table(outcome: &AblationOutcome) -> String {
    let default_h = outcome
        .variants
        .iter()
        .find(|v| v.name == "default")
        .and_then(|v| v.report.harmonic_mean);
    let mut out = String::from("# harmonic-mean deltas vs default\nvariant,h,delta_h\n");
    for v in &outcome.variants {
        let h = v.report.harmonic_mean;
        let delta = match (h, default_h) {
            (Some(h), Some(d)) => format!("{:.6}", h - d),
            _ => "-".to_string(),
        };
        let h_text = h.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".to_string());
        out.push_str(&format!("{},{},{}\n", v.name, h_text, delta));
    }
    if !outcome.audits.is_empty() {
        out.push_str("# parameter audit: n-chain vs n-average (delta must be the controller)\n");
        out.push_str("n,chain_params,average_params,measured_delta,predicted_delta,match\n");
        for audit in &outcome.audits {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                audit.chain_length,
                audit.chain_params,
                audit.average_params,
                audit.measured_delta,
                audit.predicted_delta,
                audit.matches()
            ));
        }
    }
    out
}

/// Runs the ablation and writes per-variant reports, the comparative CSV,
/// and the delta table into `dir`.
pub fn run_ablation_to_dir(
    kind: AblationKind,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<AblationOutcome> {
    let outcome = run_ablation(kind, config)?;
    std::fs::create_dir_all(dir)?;
    for v in &outcome.variants {
        report::write_text(
            &dir.join(format!("report_{}.txt", v.name)),
            &report::report_to_string(&v.report),
        )?;
        report::write_text(
            &dir.join(format!("confusion_{}.csv", v.name)),
            &report::confusion_csv(&v.report),
        )?;
    }
    let reports: Vec<&MetricsReport> = outcome.variants.iter().map(|v| &v.report).collect();
    report::write_text(&dir.join("ablation.csv"), &report::flat_csv(&reports))?;
    report::write_text(&dir.join("deltas.txt"), &delta_table(&outcome))?;
    Ok(outcome)
}
