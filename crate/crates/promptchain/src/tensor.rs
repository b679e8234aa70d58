//! Dense double-precision tensors and the named parameter store.
//!
//! Tensors are plain value types: contiguous row-major data plus a shape.
//! Trainable tensors carry an optional gradient buffer of identical shape.
//! A [`ParamSet`] owns every trainable (and deliberately frozen) tensor of a
//! model and hands out stable [`ParamId`]s that compute graphs and the
//! optimizer refer to.

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, validating that the shape matches the data length and
    /// that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dimension("tensor", "positive dimensions", format!("{shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::dimension(
                "tensor",
                format!("{numel} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// 1-D tensor from a value list.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        Tensor::new(vec![len], data)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw values; used by the optimizer and the
    /// finite-difference checker. Shape is untouchable through this.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::dimension(
                "accumulate_grad",
                format!("{} values", self.data.len()),
                format!("{} values", delta.len()),
            ));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Handle into a [`ParamSet`]; stable for the lifetime of the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    tensor: Tensor,
}

/// Ordered store of named tensors. Insertion order is the canonical parameter
/// order used by the optimizer, the gradient checker, and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Registers a trainable tensor and returns its handle.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor: tensor.with_requires_grad(),
        });
        id
    }

    /// Registers a frozen tensor: it is stored and serialized but never
    /// receives gradients or optimizer updates.
    pub fn insert_frozen(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let id = ParamId(self.entries.len());
        let mut tensor = tensor;
        tensor.requires_grad = false;
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.get(id).requires_grad())
            .collect()
    }

    /// Total number of trainable scalar values.
    pub fn trainable_value_count(&self) -> usize {
        self.trainable_ids()
            .iter()
            .map(|&id| self.get(id).numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for entry in &mut self.entries {
            entry.tensor.clear_grad();
        }
    }

    /// Multiplies every gradient buffer in place; used to average a batch.
    pub fn scale_grads(&mut self, factor: f64) {
        for entry in &mut self.entries {
            if let Some(grad) = entry.tensor.grad.as_mut() {
                for g in grad.iter_mut() {
                    *g *= factor;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data_length() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::vector(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn grad_accumulates_and_clears() {
        let mut t = Tensor::vector(vec![1.0, 2.0]).unwrap().with_requires_grad();
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        t.accumulate_grad(&[0.5, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0, 1.5]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn param_set_tracks_trainable_counts() {
        let mut params = ParamSet::new();
        let a = params.insert("a", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = params.insert_frozen("b", Tensor::vector(vec![3.0]).unwrap());
        assert!(params.get(a).requires_grad());
        assert!(!params.get(b).requires_grad());
        assert_eq!(params.trainable_value_count(), 2);
        assert_eq!(params.name(a), "a");
    }
}
