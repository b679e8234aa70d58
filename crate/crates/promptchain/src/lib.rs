//! Chained prompt tuning for contrastive image classification.
//!
//! A small stack built from scratch: a reverse-mode compute graph, frozen
//! seeded encoders standing in for a pretrained contrastive backbone, a chain
//! of learnable prompts blended by a convex recursion, per-step meta-nets
//! producing instance-specific prompt biases, and a controller that picks the
//! blending weights per image. On top sits an experiment harness with
//! synthetic cluster tasks, the base-to-new / transfer / retrieval / vqa
//! evaluation protocols, and an ablation runner.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod hashing;
pub mod meta_net;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod prompt_chain;
pub mod report;
pub mod task;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
