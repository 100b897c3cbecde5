use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::Mask;

/// Number of entries to clear for a target sparsity, `round(s * n)`.
pub fn prune_count(n: usize, target_sparsity: f64) -> usize {
    ((target_sparsity * n as f64).round() as usize).min(n)
}

/// Uniform random pruning: clears exactly `round(s * n)` positions chosen
/// without replacement. Seeded with ChaCha8 so the draw is platform-stable.
pub fn random_prune(shape: &[usize], target_sparsity: f64, seed: u64) -> Result<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_prune_with(shape, target_sparsity, &mut rng)
}

pub fn random_prune_with<R: rand::Rng + ?Sized>(
    shape: &[usize],
    target_sparsity: f64,
    rng: &mut R,
) -> Result<Mask> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::invalid(format!(
            "target sparsity {target_sparsity} outside [0, 1)"
        )));
    }
    let mut mask = Mask::ones(shape);
    let n = mask.len();
    let zeros = prune_count(n, target_sparsity);
    if zeros == 0 {
        return Ok(mask);
    }
    for i in index::sample(rng, n, zeros) {
        mask.set(i, false);
    }
    Ok(mask)
}
