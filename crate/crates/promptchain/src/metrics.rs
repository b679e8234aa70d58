//! Evaluation metrics: harmonic mean, confusion matrix, confidence stats.

use crate::error::{Error, Result};

/// H = 2ab / (a + b) of two accuracies in percent. Both must be positive.
pub fn harmonic_mean(base: f64, new: f64) -> Result<f64> {
    if !(base > 0.0) || !(new > 0.0) || !base.is_finite() || !new.is_finite() {
        return Err(Error::domain(
            "harmonic_mean",
            format!("arguments must be positive reals, got ({base}, {new})"),
        ));
    }
    Ok(2.0 * base * new / (base + new))
}

/// Square count matrix; rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, true_class: usize, predicted_class: usize) {
        self.counts[true_class * self.classes + predicted_class] += 1;
    }

    pub fn count(&self, true_class: usize, predicted_class: usize) -> u64 {
        self.counts[true_class * self.classes + predicted_class]
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        (0..self.classes).map(|p| self.count(true_class, p)).sum()
    }

    pub fn column_sum(&self, predicted_class: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, predicted_class)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Overall accuracy in percent, straight from the counts.
    pub fn accuracy_percent(&self) -> f64 {
        100.0 * self.trace() as f64 / self.total() as f64
    }
}

/// Running mean confidence split by prediction correctness.
#[derive(Debug, Clone, Default)]
pub struct ConfidenceStats {
    sum_correct: f64,
    sum_wrong: f64,
    pub n_correct: u64,
    pub n_wrong: u64,
}

impl ConfidenceStats {
    pub fn record(&mut self, confidence: f64, correct: bool) {
        if correct {
            self.sum_correct += confidence;
            self.n_correct += 1;
        } else {
            self.sum_wrong += confidence;
            self.n_wrong += 1;
        }
    }

    pub fn mean_correct(&self) -> Option<f64> {
        (self.n_correct > 0).then(|| self.sum_correct / self.n_correct as f64)
    }

    pub fn mean_wrong(&self) -> Option<f64> {
        (self.n_wrong > 0).then(|| self.sum_wrong / self.n_wrong as f64)
    }
}

/// Everything one evaluation produces. Wall time is kept in memory for
/// console output but deliberately stays out of the serialized report so
/// identical runs serialize identically.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub protocol: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub classes: usize,
    pub lambda_mode: String,
    /// The controller emits one weight per step but the recursion starts at
    /// step two, so the first weight never participates.
    pub lambda_first_step_unused: bool,
    pub trainable_parameters: usize,
    pub train_exposure_new_classes: u64,
    pub base_accuracy: f64,
    pub new_accuracy: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub r_at_1: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub confidence: ConfidenceStats,
    pub step_similarity: Vec<f64>,
    pub wall_time_secs: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_matches_reference_pairs() {
        assert!((harmonic_mean(80.23, 74.20).unwrap() - 77.10).abs() < 0.01);
        assert!((harmonic_mean(69.34, 74.22).unwrap() - 71.70).abs() < 0.01);
    }

    #[test]
    fn harmonic_mean_of_equal_arguments_is_identity() {
        for x in [1.0, 33.3, 100.0] {
            assert!((harmonic_mean(x, x).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_mean_rejects_nonpositive_inputs() {
        assert!(harmonic_mean(0.0, 50.0).is_err());
        assert!(harmonic_mean(50.0, -1.0).is_err());
    }

    #[test]
    fn confusion_matrix_bookkeeping() {
        let mut m = ConfusionMatrix::new(3);
        m.record(0, 0);
        m.record(0, 1);
        m.record(1, 1);
        m.record(2, 2);
        assert_eq!(m.trace(), 3);
        assert_eq!(m.total(), 4);
        assert_eq!(m.row_sum(0), 2);
        assert_eq!(m.column_sum(1), 2);
        assert_eq!(m.accuracy_percent(), 75.0);
    }

    #[test]
    fn confidence_stats_split_by_correctness() {
        let mut s = ConfidenceStats::default();
        s.record(0.9, true);
        s.record(0.7, true);
        s.record(0.6, false);
        assert!((s.mean_correct().unwrap() - 0.8).abs() < 1e-12);
        assert!((s.mean_wrong().unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(s.n_correct, 2);
        assert_eq!(s.n_wrong, 1);
        assert!(ConfidenceStats::default().mean_correct().is_none());
    }
}
