//! Content hashing for freeze contracts and run fingerprints.

use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

/// Incremental SHA-256 over structured numeric content.
pub struct ContentHasher {
    inner: Sha256,
}

impl ContentHasher {
    pub fn new(label: &str) -> Self {
        let mut inner = Sha256::new();
        inner.update(label.as_bytes());
        ContentHasher { inner }
    }

    pub fn update_bytes(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub fn update_usize(&mut self, value: usize) {
        self.inner.update((value as u64).to_le_bytes());
    }

    pub fn update_f64s(&mut self, values: &[f64]) {
        for v in values {
            self.inner.update(v.to_bits().to_le_bytes());
        }
    }

    pub fn update_tensor(&mut self, tensor: &Tensor) {
        self.update_usize(tensor.shape().len());
        for &d in tensor.shape() {
            self.update_usize(d);
        }
        self.update_f64s(tensor.data());
    }

    pub fn finish(self) -> String {
        let digest = self.inner.finalize();
        let mut out = String::with_capacity(digest.len() * 2);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// SHA-256 hex digest of a string, used for config fingerprints.
pub fn hash_str(label: &str, content: &str) -> String {
    let mut hasher = ContentHasher::new(label);
    hasher.update_bytes(content.as_bytes());
    hasher.finish()
}
