//! Synthetic Gaussian-cluster tasks and the domain-shift generator.
//!
//! Classes are split into equal base and new halves. Each class owns a
//! unit-norm cluster mean in raw feature space; instances are the mean plus
//! isotropic noise. Training instances exist only for base classes; test
//! instances cover both halves. Transfer evaluation applies a seeded
//! orthogonal rotation plus additive noise to the base test features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::hashing::ContentHasher;
use crate::tensor::Tensor;

/// How class descriptions are drawn; retrieval treats each caption as a
/// class, vqa concatenates question and answer token draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStyle {
    Classification,
    Retrieval,
    Vqa,
}

impl TaskStyle {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "classification" => Ok(TaskStyle::Classification),
            "retrieval" => Ok(TaskStyle::Retrieval),
            "vqa" => Ok(TaskStyle::Vqa),
            other => Err(Error::Config(format!(
                "unknown task style '{other}' (expected classification, retrieval, or vqa)"
            ))),
        }
    }
}

impl std::fmt::Display for TaskStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskStyle::Classification => write!(f, "classification"),
            TaskStyle::Retrieval => write!(f, "retrieval"),
            TaskStyle::Vqa => write!(f, "vqa"),
        }
    }
}

/// Feature-space shift used by the transfer protocol: rotate by `rotation`
/// radians in a seeded plane, then add Gaussian noise of scale `noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSpec {
    pub rotation: f64,
    pub noise: f64,
}

impl ShiftSpec {
    pub fn none() -> Self {
        ShiftSpec {
            rotation: 0.0,
            noise: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rotation == 0.0 && self.noise == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.is_finite() || !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config(format!(
                "shift needs finite rotation and noise >= 0, got rotation={}, noise={}",
                self.rotation, self.noise
            )));
        }
        Ok(())
    }
}

/// Declarative description of one synthetic task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub cluster_spread: f64,
    pub style: TaskStyle,
    pub shift: ShiftSpec,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes % 2 != 0 {
            return Err(Error::Config(format!(
                "class count must be even (equal base/new split) and >= 2, got {}",
                self.classes
            )));
        }
        if !self.cluster_spread.is_finite() || self.cluster_spread < 0.0 {
            return Err(Error::Config(format!(
                "cluster_spread must be a nonnegative real, got {}",
                self.cluster_spread
            )));
        }
        self.shift.validate()
    }
}

/// One labeled feature vector.
#[derive(Debug, Clone)]
pub struct Instance {
    pub feature: Tensor,
    pub class: usize,
}

/// A generated dataset; train covers base classes only.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub style: TaskStyle,
    pub classes: usize,
    pub base_classes: Vec<usize>,
    pub new_classes: Vec<usize>,
    pub train: Vec<Instance>,
    pub test_base: Vec<Instance>,
    pub test_new: Vec<Instance>,
    pub shift: ShiftSpec,
    pub feature_dim: usize,
    pub seed: u64,
}

const SHIFT_STREAM: u64 = 101;

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit std");
    let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::degenerate("generate_task", "zero-norm cluster mean draw".to_string()));
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(v)
}

/// Deterministically generates a dataset from (spec, feature_dim, seed).
pub fn generate_task(spec: &TaskSpec, feature_dim: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if feature_dim < 2 {
        return Err(Error::Config(format!(
            "feature dim must be >= 2, got {feature_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit std");

    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| unit_gaussian(&mut rng, feature_dim))
        .collect::<Result<Vec<_>>>()?;

    let base_classes: Vec<usize> = (0..spec.classes / 2).collect();
    let new_classes: Vec<usize> = (spec.classes / 2..spec.classes).collect();

    let sample = |class: usize, rng: &mut ChaCha8Rng| -> Result<Instance> {
        let mut feature = means[class].clone();
        if spec.cluster_spread > 0.0 {
            for x in feature.iter_mut() {
                *x += spec.cluster_spread * normal.sample(rng);
            }
        }
        Ok(Instance {
            feature: Tensor::new(vec![feature_dim], feature)?,
            class,
        })
    };

    let mut train = Vec::with_capacity(base_classes.len() * spec.train_per_class);
    for &class in &base_classes {
        for _ in 0..spec.train_per_class {
            train.push(sample(class, &mut rng)?);
        }
    }
    let mut test_base = Vec::with_capacity(base_classes.len() * spec.test_per_class);
    for &class in &base_classes {
        for _ in 0..spec.test_per_class {
            test_base.push(sample(class, &mut rng)?);
        }
    }
    let mut test_new = Vec::with_capacity(new_classes.len() * spec.test_per_class);
    for &class in &new_classes {
        for _ in 0..spec.test_per_class {
            test_new.push(sample(class, &mut rng)?);
        }
    }

    Ok(Dataset {
        style: spec.style,
        classes: spec.classes,
        base_classes,
        new_classes,
        train,
        test_base,
        test_new,
        shift: spec.shift,
        feature_dim,
        seed,
    })
}

impl Dataset {
    /// Count of training instances drawn from new classes; must be zero by
    /// construction and is audited by the evaluation report.
    pub fn train_exposure_to_new_classes(&self) -> u64 {
        self.train
            .iter()
            .filter(|inst| self.new_classes.contains(&inst.class))
            .count() as u64
    }

    pub fn content_hash(&self) -> String {
        let mut hasher = ContentHasher::new("dataset");
        hasher.update_usize(self.classes);
        for split in [&self.train, &self.test_base, &self.test_new] {
            hasher.update_usize(split.len());
            for inst in split.iter() {
                hasher.update_usize(inst.class);
                hasher.update_tensor(&inst.feature);
            }
        }
        hasher.finish()
    }

    /// Base-class test instances with the shift applied. A zero shift takes
    /// a structural shortcut and returns the features untouched, so transfer
    /// with no shift is bit-identical to base evaluation.
    pub fn shifted_test_base(&self, shift: &ShiftSpec) -> Result<Vec<Instance>> {
        shift.validate()?;
        if shift.is_zero() {
            return Ok(self.test_base.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, SHIFT_STREAM));
        // Seeded rotation plane: orthonormal (u1, u2) via Gram-Schmidt.
        let u1 = unit_gaussian(&mut rng, self.feature_dim)?;
        let mut u2 = unit_gaussian(&mut rng, self.feature_dim)?;
        let overlap: f64 = u1.iter().zip(&u2).map(|(a, b)| a * b).sum();
        for (x, a) in u2.iter_mut().zip(&u1) {
            *x -= overlap * a;
        }
        let norm = u2.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::degenerate(
                "shifted_test_base",
                "rotation plane draw collapsed".to_string(),
            ));
        }
        for x in u2.iter_mut() {
            *x /= norm;
        }

        let (sin, cos) = shift.rotation.sin_cos();
        let normal = Normal::new(0.0, 1.0).expect("unit std");
        let mut shifted = Vec::with_capacity(self.test_base.len());
        for inst in &self.test_base {
            let x = inst.feature.data();
            let c1: f64 = x.iter().zip(&u1).map(|(a, b)| a * b).sum();
            let c2: f64 = x.iter().zip(&u2).map(|(a, b)| a * b).sum();
            let mut rotated: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    v + (cos - 1.0) * (c1 * u1[i] + c2 * u2[i]) + sin * (c1 * u2[i] - c2 * u1[i])
                })
                .collect();
            if shift.noise > 0.0 {
                for v in rotated.iter_mut() {
                    *v += shift.noise * normal.sample(&mut rng);
                }
            }
            shifted.push(Instance {
                feature: Tensor::new(vec![self.feature_dim], rotated)?,
                class: inst.class,
            });
        }
        Ok(shifted)
    }
}
