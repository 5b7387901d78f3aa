//! Minimal dense-tensor numerics with reverse-mode automatic differentiation
//! and the Adam optimizer. f64 everywhere; single-threaded per tape.

mod adam;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use kernels::{MaskRow, SparsityPattern};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// A named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter; names must be unique.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.tensors.iter().map(|t| t.shape()).collect()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Copy every parameter onto a tape as a differentiable leaf, returning
    /// node ids in registration order.
    pub fn load(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect()
    }

    /// Collect the gradient of every parameter from a finished backward
    /// pass; parameters the loss never touched get zero gradients.
    pub fn collect_grads(&self, ids: &[NodeId], grads: &mut Gradients) -> Vec<Tensor> {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| {
                grads
                    .take(id)
                    .unwrap_or_else(|| Tensor::zeros(self.tensors[i].shape()))
            })
            .collect()
    }
}
