use crate::bae::{adjust_count, smallest_by};
use crate::error::{Error, Result};
use crate::fl::client::TopKGradients;
use crate::nn::SparseModel;

/// Normalizes shard sizes to aggregation weights.
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Protocol("no samples among participating clients".into()));
    }
    Ok(sizes.iter().map(|&s| s as f64 / total as f64).collect())
}

/// Weighted element-wise average, summed in the given (client-id) order.
/// All updates must share one mask.
pub fn aggregate(updates: &[&SparseModel], weights: &[f64]) -> Result<SparseModel> {
    let first = *updates.first().ok_or_else(|| Error::Protocol("nothing to aggregate".into()))?;
    if updates.len() != weights.len() {
        return Err(Error::Protocol(format!("{} updates but {} weights", updates.len(), weights.len())));
    }
    let mut out = first.clone();
    for l in first.param_layers() {
        let mask = first.layer_mask(l).unwrap();
        let n = mask.len();
        let nb = first.params(l).unwrap().bias.as_ref().map_or(0, Vec::len);
        let mut w = vec![0.0; n];
        let mut b = vec![0.0; nb];
        for (k, (u, &p)) in updates.iter().zip(weights).enumerate() {
            let up = u
                .params(l)
                .ok_or_else(|| Error::Protocol(format!("client {k} lacks layer {l}")))?;
            if up.weight.mask() != mask {
                return Err(Error::Protocol(format!("client {k} uploaded a different mask for layer {l}")));
            }
            for (acc, v) in w.iter_mut().zip(up.weight.values()) {
                *acc += p * v;
            }
            if let Some(ub) = &up.bias {
                if ub.len() != nb {
                    return Err(Error::Protocol(format!("client {k} bias length differs in layer {l}")));
                }
                for (acc, v) in b.iter_mut().zip(ub) {
                    *acc += p * v;
                }
            }
        }
        let dst = out.params_mut(l).unwrap();
        dst.weight.values_mut().copy_from_slice(&w);
        dst.weight.reapply_mask();
        if let Some(db) = dst.bias.as_mut() {
            db.copy_from_slice(&b);
        }
    }
    Ok(out)
}

/// Weighted sum of client TopK sets for one layer, over the union of their indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedTopK {
    pub layer: usize,
    /// Sorted union of uploaded indices.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn aggregate_top_k(sets: &[&TopKGradients], weights: &[f64], model: &SparseModel) -> Result<Vec<AggregatedTopK>> {
    if sets.len() != weights.len() {
        return Err(Error::Protocol(format!("{} gradient sets but {} weights", sets.len(), weights.len())));
    }
    let mut out = Vec::new();
    for l in model.prunable_layers() {
        let n = model.layer_mask(l).unwrap().len();
        let mut acc = vec![0.0; n];
        let mut seen = vec![false; n];
        for (set, &p) in sets.iter().zip(weights) {
            if let Some(t) = set.layer(l) {
                for (&i, &v) in t.indices.iter().zip(&t.values) {
                    if i >= n {
                        return Err(Error::Protocol(format!("gradient index {i} out of range in layer {l}")));
                    }
                    acc[i] += p * v;
                    seen[i] = true;
                }
            }
        }
        let indices: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
        let values = indices.iter().map(|&i| acc[i]).collect();
        out.push(AggregatedTopK { layer: l, indices, values });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdjustment {
    pub layer: usize,
    pub dropped: Vec<usize>,
    pub grown: Vec<usize>,
}

/// Per layer: drop the `xi` unpruned weights of smallest magnitude and grow the
/// `xi` pruned positions of largest aggregated gradient magnitude (ties to the
/// lower index), with `xi = round(zeta * n_l)` shrunk to the number of
/// gradient candidates. Grown weights start at zero.
pub fn adjust_structure(model: &mut SparseModel, grads: &[AggregatedTopK], zeta: f64) -> Result<Vec<LayerAdjustment>> {
    let mut report = Vec::new();
    for l in model.prunable_layers() {
        let mask = model.layer_mask(l).unwrap().clone();
        let unpruned = mask.unpruned_indices();
        let xi = adjust_count(zeta, unpruned.len());
        let (cand, gvals): (Vec<usize>, Vec<f64>) = match grads.iter().find(|g| g.layer == l) {
            Some(g) => g
                .indices
                .iter()
                .zip(&g.values)
                .filter(|(&i, _)| !mask.get(i))
                .map(|(&i, &v)| (i, v))
                .unzip(),
            None => (Vec::new(), Vec::new()),
        };
        let count = xi.min(cand.len());
        if count == 0 {
            report.push(LayerAdjustment {
                layer: l,
                dropped: Vec::new(),
                grown: Vec::new(),
            });
            continue;
        }
        if count < xi {
            log::warn!("layer {l}: only {} gradient candidates for {xi} swaps", cand.len());
        }
        let slots: Vec<usize> = (0..cand.len()).collect();
        let grown: Vec<usize> = {
            let mut g: Vec<usize> = smallest_by(&slots, count, |s| -gvals[s].abs())
                .into_iter()
                .map(|s| cand[s])
                .collect();
            g.sort_unstable();
            g
        };
        let values = model.params(l).unwrap().weight.values().to_vec();
        let dropped = smallest_by(&unpruned, count, |i| values[i].abs());
        assert!(
            dropped.iter().all(|i| mask.get(*i)) && grown.iter().all(|i| !mask.get(*i)),
            "drop and grow sets overlap"
        );

        let mut new_mask = mask;
        for &i in &dropped {
            new_mask.set(i, false);
        }
        for &i in &grown {
            new_mask.set(i, true);
        }
        let w = &mut model.params_mut(l).unwrap().weight;
        for &i in &grown {
            w.values_mut()[i] = 0.0;
        }
        w.set_mask(new_mask)?;
        report.push(LayerAdjustment { layer: l, dropped, grown });
    }
    Ok(report)
}
