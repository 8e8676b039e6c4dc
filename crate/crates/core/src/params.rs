//! Flat parameter vectors shared by every model and optimizer.
//!
//! A [`ParamVector`] is a contiguous `f64` buffer plus a [`Layout`] naming the
//! tensor blocks packed inside it. All optimizer state (duals, control
//! variates, momentum, perturbations) lives in vectors with the same layout as
//! the global model, so arithmetic between them is element-wise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    /// Packs the named blocks back to back.
    pub fn new<S: Into<String>>(blocks: impl IntoIterator<Item = (S, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let blocks = blocks
            .into_iter()
            .map(|(name, dims)| {
                let block = Block {
                    name: name.into(),
                    dims,
                    offset,
                };
                offset += block.len();
                block
            })
            .collect();
        Layout { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Total number of scalars across all blocks.
    pub fn size(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }
}

/// Model parameters (or any vector living in parameter space).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParamVector {
            values: vec![0.0; layout.size()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.size() {
            return Err(FedError::config(format!(
                "{} values do not fit a layout of size {}",
                values.len(),
                layout.size()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    /// A single-block vector, mostly useful in tests.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::new([("theta", vec![values.len()])]));
        ParamVector { values, layout }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(FedError::LayoutMismatch)
        }
    }

    #[inline]
    fn assert_layout(&self, other: &ParamVector) {
        assert!(
            self.same_layout(other),
            "combining parameter vectors with different layouts"
        );
    }

    /// `self += alpha * other`.
    ///
    /// Panics if the layouts differ; use [`ParamVector::check_layout`] first
    /// when the operands come from untrusted input.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        self.assert_layout(other);
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += alpha * y;
        }
    }

    pub fn add_assign(&mut self, other: &ParamVector) {
        self.assert_layout(other);
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += y;
        }
    }

    pub fn sub_assign(&mut self, other: &ParamVector) {
        self.assert_layout(other);
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x -= y;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for x in &mut self.values {
            *x *= alpha;
        }
    }

    /// `self - other` as a new vector.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        let mut out = self.clone();
        out.sub_assign(other);
        out
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.assert_layout(other);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Name of the first block holding a non-finite value.
    pub fn first_non_finite_block(&self) -> Option<&str> {
        self.layout
            .blocks()
            .iter()
            .find(|b| self.values[b.range()].iter().any(|v| !v.is_finite()))
            .map(|b| b.name.as_str())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Uniform mean, folded in slice order.
    pub fn mean(vectors: &[&ParamVector]) -> Result<ParamVector> {
        let weights = vec![1.0; vectors.len()];
        Self::weighted_mean(vectors, &weights)
    }

    /// `sum_i w_i v_i / sum_i w_i`, folded in slice order.
    ///
    /// Computed as `v_0 + sum_i w_i (v_i - v_0) / sum_i w_i`, which returns
    /// `v_0` bit-for-bit when there is one vector or all vectors are equal.
    pub fn weighted_mean(vectors: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
        let first = *vectors
            .first()
            .ok_or_else(|| FedError::config("cannot average zero vectors"))?;
        if weights.len() != vectors.len() {
            return Err(FedError::config("one weight per vector required"));
        }
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(FedError::config("aggregation weights must sum to a positive value"));
        }
        let mut offset = ParamVector::zeros(first.layout.clone());
        for (v, &w) in vectors.iter().zip(weights).skip(1) {
            first.check_layout(v)?;
            for ((acc, x), x0) in offset.values.iter_mut().zip(&v.values).zip(&first.values) {
                *acc += w * (x - x0);
            }
        }
        let mut out = first.clone();
        out.axpy(1.0 / total, &offset);
        Ok(out)
    }
}
