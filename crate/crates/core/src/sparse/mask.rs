use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary keep/prune indicator over a tensor. `true` means unpruned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            bits: vec![true; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            bits: vec![false; n],
        }
    }

    pub fn from_bits(shape: &[usize], bits: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if bits.len() != n {
            return Err(Error::invalid(format!(
                "mask has {} bits but shape {:?} holds {} elements",
                bits.len(),
                shape,
                n
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            bits,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, keep: bool) {
        self.bits[i] = keep;
    }

    /// Number of unpruned (set) positions.
    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.len() - self.count_ones()
    }

    /// Fraction of pruned positions; an empty mask has sparsity 0.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_zeros() as f64 / self.len() as f64
        }
    }

    pub fn density(&self) -> f64 {
        1.0 - self.sparsity()
    }

    pub fn unpruned_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn pruned_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (!b).then_some(i))
            .collect()
    }
}

/// Dense values paired with a mask. Pruned entries always hold an exact zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedTensor {
    values: Vec<f64>,
    mask: Mask,
}

impl MaskedTensor {
    /// Builds a masked tensor, zeroing any value sitting under a pruned bit.
    pub fn new(mut values: Vec<f64>, mask: Mask) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::invalid(format!(
                "{} values for a mask of {} elements",
                values.len(),
                mask.len()
            )));
        }
        for (v, &keep) in values.iter_mut().zip(mask.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(Self { values, mask })
    }

    pub fn dense(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::new(values, Mask::ones(shape))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let mask = Mask::ones(shape);
        Self {
            values: vec![0.0; mask.len()],
            mask,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.mask.shape()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of unpruned entries.
    pub fn nnz(&self) -> usize {
        self.mask.count_ones()
    }

    /// Replaces the mask and re-zeros newly pruned positions.
    pub fn set_mask(&mut self, mask: Mask) -> Result<()> {
        if mask.shape() != self.shape() {
            return Err(Error::invalid(format!(
                "mask shape {:?} does not match tensor shape {:?}",
                mask.shape(),
                self.shape()
            )));
        }
        self.mask = mask;
        self.reapply_mask();
        Ok(())
    }

    /// Applies an update only at unpruned positions: `v += scale * delta` where kept.
    pub fn masked_axpy(&mut self, scale: f64, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        for ((v, &d), &keep) in self.values.iter_mut().zip(delta).zip(self.mask.bits()) {
            if keep {
                *v += scale * d;
            }
        }
    }

    /// Mutable access to values; callers must restore the zero invariant with
    /// [`MaskedTensor::reapply_mask`] if they may write into pruned slots.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn reapply_mask(&mut self) {
        for (v, &keep) in self.values.iter_mut().zip(self.mask.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
    }

    pub fn into_parts(self) -> (Vec<f64>, Mask) {
        (self.values, self.mask)
    }

    /// Bitwise equality on values (so `-0.0 != 0.0` and NaN payloads compare) plus mask equality.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.mask == other.mask
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
