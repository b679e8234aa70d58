//! Command-line driver: train, eval, ablate, gradcheck.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use promptchain::ablation::{run_ablation_to_dir, AblationKind};
use promptchain::checkpoint;
use promptchain::config::ExperimentConfig;
use promptchain::error::Result;
use promptchain::eval::{evaluate, Protocol, RunMeta};
use promptchain::model::{grad_check_model, CotModel};
use promptchain::report;
use promptchain::task::generate_task;
use promptchain::tensor::Tensor;
use promptchain::train::train;

#[derive(Parser)]
#[command(name = "promptchain", version, about = "Chained prompt tuning on synthetic contrastive classification tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the config's task and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under a protocol and write the report files.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to <out>/checkpoint.txt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// base_to_new, transfer, retrieval, or vqa.
        #[arg(long, default_value = "base_to_new")]
        protocol: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate wiring variants; write the comparative CSV and
    /// delta table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// chain_length, average_baseline, fixed_chain, unchained_metanets,
        /// concat_k, prompt_length, or all.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check full-model analytic gradients against central differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeded model/instance draws to check.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Temperature used while checking; 1.0 keeps the softmax
        /// well-conditioned for finite differences.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Flagged coordinates whose absolute disagreement stays under this
        /// floor are measurement noise (near-zero true gradient), not wrong
        /// gradients; they are reported but do not fail the run.
        #[arg(long, default_value_t = 1e-8)]
        noise_floor: f64,
    },
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.output.dir = out.display().to_string();
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let seeds = config.run_seeds();
    let data = generate_task(&config.task_spec()?, config.dims().image_feature, seeds.task)?;
    let mut model = CotModel::build(&config.model_spec()?, &seeds.model)?;
    let result = train(&mut model, &data, &config.training, seeds.shuffle)?;

    let out = PathBuf::from(&config.output.dir);
    std::fs::create_dir_all(&out)?;
    checkpoint::save(&model, &out.join("checkpoint.txt"))?;
    report::write_text(
        &out.join("train_report.txt"),
        &report::train_report_to_string(&result, config.seed, &config.config_hash()),
    )?;
    println!(
        "trained {} steps over {} epochs, final epoch loss {:.6} ({:.2}s)",
        result.steps,
        result.epoch_losses.len(),
        result.epoch_losses.last().copied().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    println!("checkpoint: {}", out.join("checkpoint.txt").display());
    Ok(())
}

fn cmd_eval(config: &ExperimentConfig, checkpoint_path: Option<&Path>, protocol: &str) -> Result<()> {
    let out = PathBuf::from(&config.output.dir);
    let default_ckpt = out.join("checkpoint.txt");
    let ckpt_path = checkpoint_path.unwrap_or(&default_ckpt);
    let model = checkpoint::load(ckpt_path)?;

    let seeds = config.run_seeds();
    let task_spec = config.task_spec()?;
    let data = generate_task(&task_spec, config.dims().image_feature, seeds.task)?;
    let protocol = Protocol::parse(protocol, task_spec.shift)?;
    let meta = RunMeta {
        variant: "default".into(),
        seed: config.seed,
        config_hash: config.config_hash(),
    };
    let metrics = evaluate(&model, &data, &protocol, &meta)?;

    std::fs::create_dir_all(&out)?;
    report::write_text(&out.join("report.txt"), &report::report_to_string(&metrics))?;
    report::write_text(&out.join("metrics.csv"), &report::flat_csv(&[&metrics]))?;
    report::write_text(&out.join("confusion.csv"), &report::confusion_csv(&metrics))?;

    let h = metrics
        .harmonic_mean
        .map(|h| format!("{h:.2}"))
        .unwrap_or_else(|| "-".to_string());
    let new = metrics
        .new_accuracy
        .map(|a| format!("{a:.2}"))
        .unwrap_or_else(|| "-".to_string());
    println!(
        "{}: base {:.2}, new {}, H {} ({:.2}s)",
        metrics.protocol, metrics.base_accuracy, new, h, metrics.wall_time_secs
    );
    println!("report: {}", out.join("report.txt").display());
    Ok(())
}

fn cmd_ablate(config: &ExperimentConfig, kind: &str) -> Result<()> {
    let started = std::time::Instant::now();
    let kind = AblationKind::parse(kind)?;
    let out = PathBuf::from(&config.output.dir);
    let outcome = run_ablation_to_dir(kind, config, &out)?;
    for v in &outcome.variants {
        let h = v
            .report
            .harmonic_mean
            .map(|h| format!("{h:.2}"))
            .unwrap_or_else(|| "-".to_string());
        println!("{:<22} base {:>6.2}  H {}", v.name, v.report.base_accuracy, h);
    }
    for audit in &outcome.audits {
        println!(
            "audit n={}: chain {} vs average {} params, delta {} (controller predicts {}) -> {}",
            audit.chain_length,
            audit.chain_params,
            audit.average_params,
            audit.measured_delta,
            audit.predicted_delta,
            if audit.matches() { "ok" } else { "MISMATCH" }
        );
    }
    println!(
        "ablation files in {} ({:.2}s)",
        out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_gradcheck(
    config: &ExperimentConfig,
    seeds: u64,
    step: f64,
    tolerance: f64,
    tau: f64,
    noise_floor: f64,
) -> Result<()> {
    let started = std::time::Instant::now();
    let mut worst = 0.0_f64;
    let mut failed_seeds = 0usize;
    for i in 0..seeds {
        let mut run_config = config.clone();
        run_config.seed = config.seed.wrapping_add(i);
        run_config.model.temperature = tau;
        let run_seeds = run_config.run_seeds();
        let mut model = CotModel::build(&run_config.model_spec()?, &run_seeds.model)?;

        let mut rng = ChaCha8Rng::seed_from_u64(run_seeds.gradcheck);
        let dim = run_config.dims().image_feature;
        let feature = Tensor::vector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let classes: Vec<usize> = (0..run_config.task.classes).collect();
        let label = rng.random_range(0..classes.len());

        let report = grad_check_model(&mut model, &feature, &classes, label, step, tolerance)?;
        worst = worst.max(report.max_rel_error);

        // A wrong derivative disagrees at the scale of the gradient itself;
        // a flag whose absolute gap sits under the noise floor is the
        // checker bottoming out on a near-zero coordinate.
        let genuine: Vec<_> = report
            .flagged
            .iter()
            .filter(|f| (f.analytic - f.numeric).abs() > noise_floor)
            .collect();
        let status = if !genuine.is_empty() {
            "FAIL"
        } else if !report.flagged.is_empty() {
            "ok (noise-limited)"
        } else {
            "ok"
        };
        println!(
            "seed {:>3}: max rel error {:.3e} over {} parameters [{}]",
            run_config.seed,
            report.max_rel_error,
            report.per_param.len(),
            status
        );
        for flag in report.flagged.iter().take(8) {
            let kind = if (flag.analytic - flag.numeric).abs() > noise_floor {
                "WRONG"
            } else {
                "noise"
            };
            println!(
                "    {}[{}]: analytic {:.6e} vs numeric {:.6e} (rel {:.3e}) [{kind}]",
                flag.param, flag.index, flag.analytic, flag.numeric, flag.rel_error
            );
        }
        if !genuine.is_empty() {
            failed_seeds += 1;
        }
    }
    println!(
        "gradcheck: {} seeds, worst rel error {:.3e}, tolerance {:.1e} ({:.2}s)",
        seeds,
        worst,
        tolerance,
        started.elapsed().as_secs_f64()
    );
    if failed_seeds > 0 {
        return Err(promptchain::Error::contract(
            "gradcheck",
            format!("{failed_seeds} of {seeds} seeds have gradients beyond the noise floor"),
        ));
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, seed, out } => {
            let config = load_config(&config, seed, out.as_deref())?;
            cmd_train(&config)
        }
        Command::Eval {
            config,
            checkpoint,
            protocol,
            seed,
            out,
        } => {
            let config = load_config(&config, seed, out.as_deref())?;
            cmd_eval(&config, checkpoint.as_deref(), &protocol)
        }
        Command::Ablate {
            config,
            kind,
            seed,
            out,
        } => {
            let config = load_config(&config, seed, out.as_deref())?;
            cmd_ablate(&config, &kind)
        }
        Command::Gradcheck {
            config,
            seeds,
            step,
            tolerance,
            tau,
            noise_floor,
        } => {
            let config = load_config(&config, None, None)?;
            cmd_gradcheck(&config, seeds, step, tolerance, tau, noise_floor)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let one_line = e.to_string().replace('\n', " ");
            eprintln!("error: {}", one_line.trim());
            ExitCode::FAILURE
        }
    }
}
