//! Deterministic result files: the per-run report, the flat metrics CSV, and
//! the confusion-matrix CSV.
//!
//! Identical runs must serialize byte-identically, so all formatting is
//! fixed-width and nothing time- or environment-dependent is written.

use std::path::Path;

use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::train::TrainResult;

fn fmt_opt(value: Option<f64>, precision: usize) -> String {
    match value {
        Some(v) => format!("{v:.precision$}"),
        None => "-".to_string(),
    }
}

/// The self-describing key/value report for one run.
pub fn report_to_string(r: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("# promptchain run report v1\n");
    out.push_str(&format!("protocol = {}\n", r.protocol));
    out.push_str(&format!("variant = {}\n", r.variant));
    out.push_str(&format!("seed = {}\n", r.seed));
    out.push_str(&format!("config_hash = {}\n", r.config_hash));
    out.push_str(&format!("classes = {}\n", r.classes));
    out.push_str(&format!("lambda = {}\n", r.lambda_mode));
    out.push_str(&format!(
        "lambda_first_step_unused = {}\n",
        r.lambda_first_step_unused
    ));
    out.push_str(&format!("trainable_parameters = {}\n", r.trainable_parameters));
    out.push_str(&format!(
        "train_exposure_new_classes = {}\n",
        r.train_exposure_new_classes
    ));
    out.push_str(&format!("base_accuracy = {:.6}\n", r.base_accuracy));
    out.push_str(&format!("new_accuracy = {}\n", fmt_opt(r.new_accuracy, 6)));
    out.push_str(&format!("harmonic_mean = {}\n", fmt_opt(r.harmonic_mean, 6)));
    out.push_str(&format!("r_at_1 = {}\n", fmt_opt(r.r_at_1, 6)));
    out.push_str(&format!(
        "mean_confidence_correct = {}\n",
        fmt_opt(r.confidence.mean_correct(), 6)
    ));
    out.push_str(&format!(
        "mean_confidence_wrong = {}\n",
        fmt_opt(r.confidence.mean_wrong(), 6)
    ));
    out.push_str(&format!("correct_count = {}\n", r.confidence.n_correct));
    out.push_str(&format!("wrong_count = {}\n", r.confidence.n_wrong));
    let sims: Vec<String> = r.step_similarity.iter().map(|s| format!("{s:.9}")).collect();
    out.push_str(&format!("step_similarity = {}\n", sims.join(",")));
    out
}

pub const FLAT_CSV_HEADER: &str = "variant,base,new,h,r_at_1,confidence_correct,confidence_wrong";

fn csv_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// One row of the flat plotting CSV.
pub fn flat_csv_row(r: &MetricsReport) -> String {
    format!(
        "{},{:.6},{},{},{},{},{}",
        r.variant,
        r.base_accuracy,
        csv_opt(r.new_accuracy),
        csv_opt(r.harmonic_mean),
        csv_opt(r.r_at_1),
        csv_opt(r.confidence.mean_correct()),
        csv_opt(r.confidence.mean_wrong()),
    )
}

pub fn flat_csv(reports: &[&MetricsReport]) -> String {
    let mut out = String::from(FLAT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&flat_csv_row(r));
        out.push('\n');
    }
    out
}

/// Integer counts; rows are true classes, columns predicted classes.
pub fn confusion_csv(r: &MetricsReport) -> String {
    let classes = r.confusion.classes();
    let mut out = String::from("class");
    for p in 0..classes {
        out.push_str(&format!(",pred_{p}"));
    }
    out.push('\n');
    for t in 0..classes {
        out.push_str(&format!("{t}"));
        for p in 0..classes {
            out.push_str(&format!(",{}", r.confusion.count(t, p)));
        }
        out.push('\n');
    }
    out
}

/// Loss trace from a training run.
pub fn train_report_to_string(result: &TrainResult, seed: u64, config_hash: &str) -> String {
    let mut out = String::new();
    out.push_str("# promptchain training report v1\n");
    out.push_str(&format!("seed = {seed}\n"));
    out.push_str(&format!("config_hash = {config_hash}\n"));
    out.push_str(&format!("steps = {}\n", result.steps));
    for (epoch, loss) in result.epoch_losses.iter().enumerate() {
        out.push_str(&format!("epoch_{epoch}_loss = {loss:.9}\n"));
    }
    out
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, content)?;
    Ok(())
}
