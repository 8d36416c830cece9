//! Dense `f64` tensors and a define-by-run reverse-mode autodiff graph.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are either
//! constants ([`Graph::input`]) or trainable parameters ([`Graph::param`]);
//! every op records enough state to run its backward rule, and
//! [`Graph::backward`] walks the nodes in reverse creation order, which is a
//! valid reverse topological order because inputs always precede outputs.

mod graph;
pub(crate) mod kernels;

pub use graph::{Gradients, Graph, Var};

use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        ensure!(
            expected == data.len(),
            Dimension,
            "shape {:?} holds {} values but {} were supplied",
            shape,
            expected,
            data.len()
        );
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        ensure!(
            self.data.len() == 1,
            Contract,
            "item() on tensor of shape {:?}",
            self.shape
        );
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        ensure!(
            n == self.data.len(),
            Dimension,
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        ensure!(!items.is_empty(), Contract, "stack of zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            ensure!(t.shape == inner, Dimension, "stack: {:?} vs {:?}", t.shape, inner);
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&inner);
        Ok(Self { shape, data })
    }

    /// Row-wise argmax of a `[N, K]` tensor.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        ensure!(
            self.rank() == 2,
            Dimension,
            "argmax_rows expects rank 2, got {:?}",
            self.shape
        );
        let k = self.shape[1];
        Ok(self
            .data
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}
