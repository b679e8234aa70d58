//! Frozen text and image encoders plus the class-name vocabulary.
//!
//! Both encoders are deterministic functions of (seed, dims) and never train:
//! they stand in for a pretrained contrastive backbone and define the joint
//! embedding space. The text path is differentiable with respect to its token
//! inputs (so prompt gradients flow through it) but its weights enter compute
//! graphs as constants. The image path is evaluated outside any graph; no
//! gradient ever reaches it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::hashing::ContentHasher;
use crate::tensor::Tensor;

/// Embedding dimensions shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    /// Token embedding dimension (word space).
    pub token: usize,
    /// Raw image feature dimension.
    pub image_feature: usize,
    /// Joint embedding dimension.
    pub joint: usize,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.token < 2 || self.image_feature < 2 || self.joint < 2 {
            return Err(Error::Config(format!(
                "all dims must be >= 2, got token={}, image_feature={}, joint={}",
                self.token, self.image_feature, self.joint
            )));
        }
        if self.joint % 16 != 0 {
            return Err(Error::Config(format!(
                "joint dim must be divisible by 16 (bottleneck layers are joint/16 wide), got {}",
                self.joint
            )));
        }
        Ok(())
    }

    /// Width of the meta-net / controller bottleneck.
    pub fn hidden(&self) -> usize {
        self.joint / 16
    }
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            token: 16,
            image_feature: 64,
            joint: 64,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("std is positive");
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("seeded draw is finite")
}

/// Frozen two-layer text encoder and one-layer image encoder.
#[derive(Debug, Clone)]
pub struct FrozenEncoders {
    seed: u64,
    dims: EncoderDims,
    text_w1: Tensor, // [hidden, token]
    text_w2: Tensor, // [joint, hidden]
    image_w: Tensor, // [joint, image_feature]
}

impl FrozenEncoders {
    /// Deterministically builds the encoder weights from (seed, dims).
    /// Weights are drawn from N(0, 1/fan_in); there are no bias terms, so the
    /// image path is exactly homogeneous before normalization.
    pub fn build(seed: u64, dims: EncoderDims) -> Result<Self> {
        dims.validate()?;
        let hidden = dims.hidden();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text_w1 = gaussian_matrix(&mut rng, hidden, dims.token, (1.0 / dims.token as f64).sqrt());
        let text_w2 = gaussian_matrix(&mut rng, dims.joint, hidden, (1.0 / hidden as f64).sqrt());
        let image_w = gaussian_matrix(
            &mut rng,
            dims.joint,
            dims.image_feature,
            (1.0 / dims.image_feature as f64).sqrt(),
        );
        Ok(FrozenEncoders {
            seed,
            dims,
            text_w1,
            text_w2,
            image_w,
        })
    }

    pub fn dims(&self) -> EncoderDims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean-pool the token nodes, push them through the frozen dense layers
    /// (tanh in between), and project onto the unit sphere. The weights enter
    /// the graph as constants, so gradients stop at the token inputs.
    pub fn encode_text(&self, graph: &mut Graph, tokens: &[NodeId]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::contract("encode_text", "empty token sequence"));
        }
        for &t in tokens {
            let shape = graph.shape(t);
            if shape != [self.dims.token] {
                return Err(Error::dimension(
                    "encode_text",
                    format!("[{}]", self.dims.token),
                    format!("{shape:?}"),
                ));
            }
        }
        let pooled = graph.mean_stack(tokens)?;
        let w1 = graph.constant_tensor(&self.text_w1)?;
        let h = graph.matvec(w1, pooled)?;
        let h = graph.tanh(h)?;
        let w2 = graph.constant_tensor(&self.text_w2)?;
        let out = graph.matvec(w2, h)?;
        graph.normalize(out)
    }

    /// Projects a raw image feature into the joint space and normalizes it.
    /// Runs outside any graph: the image path carries no gradients.
    pub fn encode_image(&self, feature: &Tensor) -> Result<Tensor> {
        if feature.shape() != [self.dims.image_feature] {
            return Err(Error::dimension(
                "encode_image",
                format!("[{}]", self.dims.image_feature),
                format!("{:?}", feature.shape()),
            ));
        }
        if feature.data().iter().all(|&v| v == 0.0) {
            return Err(Error::degenerate("encode_image", "zero feature vector".to_string()));
        }
        let d_v = self.dims.image_feature;
        let mut out = vec![0.0; self.dims.joint];
        for k in 0..self.dims.joint {
            let row = &self.image_w.data()[k * d_v..(k + 1) * d_v];
            out[k] = row.iter().zip(feature.data()).map(|(w, f)| w * f).sum();
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::degenerate(
                "encode_image",
                "projected feature has zero norm".to_string(),
            ));
        }
        for v in out.iter_mut() {
            *v /= norm;
        }
        Tensor::new(vec![self.dims.joint], out)
    }

    /// Hash over every weight bit; unchanged hashes before and after training
    /// are the freeze contract.
    pub fn content_hash(&self) -> String {
        let mut hasher = ContentHasher::new("frozen-encoders");
        hasher.update_usize(self.dims.token);
        hasher.update_usize(self.dims.image_feature);
        hasher.update_usize(self.dims.joint);
        hasher.update_tensor(&self.text_w1);
        hasher.update_tensor(&self.text_w2);
        hasher.update_tensor(&self.image_w);
        hasher.finish()
    }
}

/// Frozen per-class name-token embeddings.
#[derive(Debug, Clone)]
pub struct ClassVocabulary {
    seed: u64,
    token_dim: usize,
    tokens: Vec<Vec<Tensor>>, // [class][token]
}

impl ClassVocabulary {
    /// Draws `tokens_per_class` Gaussian tokens for each class. Classes must
    /// end up with distinct token sets; a collision is a seed problem and is
    /// reported rather than silently accepted.
    pub fn build(seed: u64, classes: usize, tokens_per_class: usize, token_dim: usize) -> Result<Self> {
        if classes < 1 || tokens_per_class < 1 || token_dim < 1 {
            return Err(Error::Config(format!(
                "vocabulary needs classes >= 1, tokens_per_class >= 1, token_dim >= 1, got {classes}/{tokens_per_class}/{token_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit std");
        let mut tokens = Vec::with_capacity(classes);
        for _ in 0..classes {
            let mut class_tokens = Vec::with_capacity(tokens_per_class);
            for _ in 0..tokens_per_class {
                let data: Vec<f64> = (0..token_dim).map(|_| normal.sample(&mut rng)).collect();
                class_tokens.push(Tensor::new(vec![token_dim], data)?);
            }
            tokens.push(class_tokens);
        }

        // Seed-collision check: identical token sets would alias two classes.
        let mut fingerprints: Vec<(String, usize)> = tokens
            .iter()
            .enumerate()
            .map(|(i, class_tokens)| {
                let mut hasher = ContentHasher::new("class");
                for t in class_tokens {
                    hasher.update_tensor(t);
                }
                (hasher.finish(), i)
            })
            .collect();
        fingerprints.sort();
        for pair in fingerprints.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Config(format!(
                    "vocabulary seed collision: classes {} and {} share identical tokens",
                    pair[0].1, pair[1].1
                )));
            }
        }

        Ok(ClassVocabulary {
            seed,
            token_dim,
            tokens,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens_per_class(&self) -> usize {
        self.tokens[0].len()
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn class_tokens(&self, class: usize) -> Result<&[Tensor]> {
        self.tokens.get(class).map(|v| v.as_slice()).ok_or(Error::IndexOutOfRange {
            op: "class_tokens",
            index: class,
            len: self.tokens.len(),
        })
    }

    pub fn content_hash(&self) -> String {
        let mut hasher = ContentHasher::new("class-vocabulary");
        hasher.update_usize(self.tokens.len());
        for class_tokens in &self.tokens {
            for t in class_tokens {
                hasher.update_tensor(t);
            }
        }
        hasher.finish()
    }
}
