use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

const MAX_REDRAWS: usize = 100;

/// Draws `Dirichlet(alpha * 1_k)` as normalized Gamma samples.
pub fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(format!("Dirichlet alpha {alpha}: {e}")))?;
    let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|v| *v /= sum);
    } else {
        // Every draw underflowed (tiny alpha): fall back to a single random owner.
        p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
    }
    Ok(p)
}

fn draw<R: Rng + ?Sized>(by_class: &[Vec<usize>], k: usize, alpha: f64, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let mut shards = vec![Vec::new(); k];
    for members in by_class {
        let mut members = members.clone();
        members.shuffle(rng);
        let p = dirichlet(k, alpha, rng)?;
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (client, pk) in p.iter().enumerate() {
            cum += pk;
            let end = if client + 1 == k { n } else { ((cum * n as f64).floor() as usize).min(n) };
            shards[client].extend_from_slice(&members[start..end.max(start)]);
            start = end.max(start);
        }
    }
    Ok(shards)
}

/// Splits sample indices into `k` label-skewed shards. Each class is divided
/// by an independent `Dirichlet(alpha)` draw. Partitions leaving some client
/// below `min_shard` samples are redrawn a bounded number of times, after which
/// the largest shards donate samples round-robin. Shards are sorted.
pub fn partition_dirichlet<R: Rng + ?Sized>(
    labels: &[usize],
    k: usize,
    alpha: f64,
    min_shard: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::invalid("at least one client is required"));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!("{k} clients for {} samples", labels.len())));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("Dirichlet alpha must be positive, got {alpha}")));
    }
    let min_shard = min_shard.clamp(1, labels.len() / k);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut shards = draw(&by_class, k, alpha, rng)?;
    let mut redraws = 0;
    while shards.iter().any(|s| s.len() < min_shard) && redraws < MAX_REDRAWS {
        shards = draw(&by_class, k, alpha, rng)?;
        redraws += 1;
    }
    if shards.iter().any(|s| s.len() < min_shard) {
        log::warn!("Dirichlet partition still short after {MAX_REDRAWS} redraws; filling round-robin");
        for short in 0..k {
            while shards[short].len() < min_shard {
                let donor = (0..k).max_by_key(|&c| (shards[c].len(), std::cmp::Reverse(c))).unwrap();
                let moved = shards[donor].pop().expect("donor has samples");
                shards[short].push(moved);
            }
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(per_class: usize, classes: usize) -> Vec<usize> {
        (0..per_class * classes).map(|i| i % classes).collect()
    }

    #[test]
    fn single_client_gets_everything() {
        let y = labels(10, 3);
        let s = partition_dirichlet(&y, 1, 0.5, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s, vec![(0..30).collect::<Vec<_>>()]);
    }

    #[test]
    fn shards_cover_every_sample_once() {
        let y = labels(50, 3);
        let s = partition_dirichlet(&y, 8, 0.5, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut all: Vec<usize> = s.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..150).collect::<Vec<_>>());
        assert!(s.iter().all(|v| v.len() >= 4));
    }

    #[test]
    fn too_many_clients_is_invalid() {
        let y = labels(1, 3);
        assert!(partition_dirichlet(&y, 4, 0.5, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn impossible_minimum_falls_back_to_fill() {
        let y = labels(4, 2);
        let s = partition_dirichlet(&y, 4, 1e-3, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(s.iter().all(|v| v.len() == 2));
    }
}
