//! Scaled activation pruning: top-k magnitude pruning of the activation copies
//! retained for the backward pass.
//!
//! The forward computation always consumes the dense activation; only the
//! cached copy used for weight gradients is pruned. Activation gradients
//! flowing to earlier layers are never pruned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::sparse::auto_storage_bits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapConfig {
    /// Target activation-cache sparsity `s_ta` in `[0, 1)`.
    pub target_sparsity: f64,
    /// Per parameterized layer enable flags; `None` enables every layer.
    pub enabled: Option<Vec<bool>>,
}

impl SapConfig {
    pub fn new(target_sparsity: f64) -> Result<Self> {
        validate_target(target_sparsity)?;
        Ok(Self {
            target_sparsity,
            enabled: None,
        })
    }

    /// Keep-everything caching.
    pub fn dense() -> Self {
        Self {
            target_sparsity: 0.0,
            enabled: None,
        }
    }

    pub fn sparsity_for(&self, param_layer: usize) -> f64 {
        match &self.enabled {
            Some(flags) if !flags.get(param_layer).copied().unwrap_or(true) => 0.0,
            _ => self.target_sparsity,
        }
    }
}

fn validate_target(s_ta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s_ta) {
        return Err(Error::invalid(format!(
            "target activation sparsity {s_ta} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Elements kept for a target sparsity: `n - ceil(s_ta * n)`, so the achieved
/// sparsity never falls below the target.
pub fn kept_count(n: usize, s_ta: f64) -> usize {
    // Tolerate representation error such as 0.9 * 10 = 9.000000000000002.
    let pruned = (s_ta * n as f64 - 1e-9).ceil().max(0.0) as usize;
    n - pruned.min(n)
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Sparse { indices: Vec<u32>, values: Vec<f64> },
}

/// Retained copy of a layer input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    shape: Vec<usize>,
    storage: Storage,
}

impl ActivationCache {
    pub fn from_dense(act: &Tensor) -> Self {
        Self {
            shape: act.shape().to_vec(),
            storage: Storage::Dense(act.data().to_vec()),
        }
    }

    /// Builds a sparse cache from raw parts; validated lazily by [`densify`].
    pub fn from_parts(shape: &[usize], indices: Vec<u32>, values: Vec<f64>) -> Self {
        Self {
            shape: shape.to_vec(),
            storage: Storage::Sparse { indices, values },
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn kept(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.len(),
            Storage::Sparse { indices, .. } => indices.len(),
        }
    }

    /// Achieved sparsity `s_a` of the cache.
    pub fn sparsity(&self) -> f64 {
        let n = self.numel();
        if n == 0 {
            0.0
        } else {
            1.0 - self.kept() as f64 / n as f64
        }
    }

    /// Kept flat indices in ascending order.
    pub fn kept_indices(&self) -> Vec<usize> {
        match &self.storage {
            Storage::Dense(v) => (0..v.len()).collect(),
            Storage::Sparse { indices, .. } => indices.iter().map(|&i| i as usize).collect(),
        }
    }

    pub fn kept_values(&self) -> &[f64] {
        match &self.storage {
            Storage::Dense(v) => v,
            Storage::Sparse { values, .. } => values,
        }
    }
}

/// Keeps the `kept_count(n, s_ta)` largest-magnitude entries; ties go to the
/// lower flat index. Top-k is global over the whole tensor.
pub fn prune_activation(act: &Tensor, s_ta: f64) -> Result<ActivationCache> {
    validate_target(s_ta)?;
    let n = act.len();
    let k = kept_count(n, s_ta);
    if k == n {
        return Ok(ActivationCache::from_dense(act));
    }
    let data = act.data();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let cmp = |a: &u32, b: &u32| {
        let (va, vb) = (data[*a as usize].abs(), data[*b as usize].abs());
        vb.total_cmp(&va).then(a.cmp(b))
    };
    if k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    order.truncate(k);
    order.sort_unstable();
    let values = order.iter().map(|&i| data[i as usize]).collect();
    Ok(ActivationCache {
        shape: act.shape().to_vec(),
        storage: Storage::Sparse {
            indices: order,
            values,
        },
    })
}

/// Dense reconstruction; positions not kept are exactly zero.
pub fn densify(cache: &ActivationCache) -> Result<Tensor> {
    let n = cache.numel();
    match &cache.storage {
        Storage::Dense(v) => {
            if v.len() != n {
                return Err(Error::CorruptCache { index: v.len(), len: n });
            }
            Tensor::new(&cache.shape, v.clone())
        }
        Storage::Sparse { indices, values } => {
            if indices.len() != values.len() {
                return Err(Error::CorruptCache {
                    index: indices.len().max(values.len()),
                    len: n,
                });
            }
            let mut out = vec![0.0; n];
            for (&i, &v) in indices.iter().zip(values) {
                let i = i as usize;
                if i >= n {
                    return Err(Error::CorruptCache { index: i, len: n });
                }
                out[i] = v;
            }
            Tensor::new(&cache.shape, out)
        }
    }
}

/// Storage of the cache under the density-selected scheme, plus `n` sign
/// bits when the preceding ReLU needs its sign pattern for backward.
pub fn cache_storage_bits(cache: &ActivationCache, b: u32, with_sign_bits: bool) -> u64 {
    let n = cache.numel();
    if n == 0 {
        return 0;
    }
    let values = auto_storage_bits(&cache.shape, cache.kept(), b)
        .expect("kept count never exceeds element count");
    values + if with_sign_bits { n as u64 } else { 0 }
}

/// Dense caching cost of `n` elements, `n * b` (+ `n` sign bits).
pub fn dense_cache_bits(n: usize, b: u32, with_sign_bits: bool) -> u64 {
    n as u64 * u64::from(b) + if with_sign_bits { n as u64 } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{select_scheme_for, storage_bits, CompressionScheme};

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(&[1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_target_keeps_everything() {
        let a = t(&[3.0, -5.0, 0.0, 1.0]);
        let c = prune_activation(&a, 0.0).unwrap();
        assert_eq!(c.kept(), 4);
        assert_eq!(densify(&c).unwrap(), a);
    }

    #[test]
    fn keeps_two_largest_magnitudes() {
        let c = prune_activation(&t(&[3.0, -5.0, 0.0, 1.0]), 0.5).unwrap();
        assert_eq!(c.kept_indices(), vec![0, 1]);
        assert_eq!(c.kept_values(), &[3.0, -5.0]);
        assert_eq!(densify(&c).unwrap().data(), &[3.0, -5.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let c = prune_activation(&t(&[2.0, 2.0, -2.0, 2.0]), 0.75).unwrap();
        assert_eq!(c.kept_indices(), vec![0]);
    }

    #[test]
    fn near_one_target_can_empty_a_tiny_cache() {
        let c = prune_activation(&t(&[1.0, 2.0, 3.0, 4.0]), 0.99).unwrap();
        assert_eq!(c.kept(), 0);
        assert!(densify(&c).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kept_count_respects_target() {
        assert_eq!(kept_count(10, 0.9), 1);
        assert_eq!(kept_count(10_000, 0.9), 1000);
        assert_eq!(kept_count(7, 0.5), 3);
        assert_eq!(kept_count(0, 0.5), 0);
        for n in 1..200 {
            for s in [0.1, 0.25, 0.3, 0.5, 0.7, 0.9, 0.95] {
                let k = kept_count(n, s);
                assert!(1.0 - k as f64 / n as f64 >= s - 1e-12);
            }
        }
    }

    #[test]
    fn corrupt_index_is_reported() {
        let c = ActivationCache::from_parts(&[1, 4], vec![7], vec![1.0]);
        assert!(matches!(densify(&c), Err(Error::CorruptCache { index: 7, len: 4 })));
    }

    #[test]
    fn cache_bits_examples() {
        let a = Tensor::new(&[1, 10_000], (0..10_000).map(|i| i as f64).collect()).unwrap();
        let c = prune_activation(&a, 0.9).unwrap();
        assert_eq!(select_scheme_for(1, 10_000, 1000), CompressionScheme::Coo);
        assert_eq!(cache_storage_bits(&c, 32, true), 46_000 + 10_000);
        assert!(dense_cache_bits(10_000, 32, false) >= 3 * cache_storage_bits(&c, 32, true));

        let d = prune_activation(&a, 0.0).unwrap();
        assert_eq!(
            cache_storage_bits(&d, 32, true),
            storage_bits(10_000, 10_000, 32, CompressionScheme::Dense, 1, 10_000).unwrap() + 10_000
        );
        let empty = prune_activation(&Tensor::zeros(&[0, 4]), 0.5).unwrap();
        assert_eq!(cache_storage_bits(&empty, 32, true), 0);
    }
}
