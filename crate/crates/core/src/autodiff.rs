//! Reverse-mode automatic differentiation on dense tensors, sized for this
//! parser: vectors and matrices, an append-only tape per sentence, and the
//! handful of primitives the encoder, gates, fusion and scorers need.
//!
//! Ops are infallible at the call site; the first shape mismatch or
//! non-finite value poisons the graph and is reported by [`Graph::value`]
//! or [`Graph::backward`]. Training runs in `f32`; gradient checking runs
//! the same generic code in `f64`.

mod gradcheck;
mod graph;
mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{GradAccum, OptState};
pub use scalar::Scalar;
pub use tensor::Tensor;

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got {len} elements")]
    NonScalarLoss { len: usize },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
}

/// Index of a parameter in its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors. Values are held behind `Arc` so graphs on
/// worker threads can snapshot them cheaply; the optimizer mutates them
/// between batches via copy-on-write.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<F>>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<F>) -> ParamId {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name.to_string());
        self.values.push(Arc::new(value));
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Arc<Tensor<F>> {
        &self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn replace(&mut self, id: ParamId, value: Tensor<F>) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "replacement for `{}` changes shape",
            self.names[id.0]
        );
        self.values[id.0] = Arc::new(value);
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Arc<Tensor<F>>)> {
        self.names
            .iter()
            .zip(self.values.iter())
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}
