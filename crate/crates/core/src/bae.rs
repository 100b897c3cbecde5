//! Budget-aware extrusion.
//!
//! Before the server prunes, clients mark the smallest-magnitude unpruned
//! weights of every prunable layer and train with a penalty on them, so that
//! their information moves into surviving weights. The step size during this
//! phase is floored by a budgeted schedule:
//!
//! ```text
//! p(t)  = (2T - 2t) / (2T - t)
//! beta  = p(t) * (2 sigmoid(|theta_low|) - 1) * eta_0
//! mu    = max(eta_t, beta)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientSet, SparseModel};

/// Adjustment rate `0.2 (1 + cos(pi t / (R_stop E)))`; zero past the stop iteration.
pub fn adjustment_rate(t_iter: u64, r_stop: usize, local_epochs: usize) -> f64 {
    let horizon = (r_stop * local_epochs) as u64;
    if horizon == 0 || t_iter > horizon {
        return 0.0;
    }
    let zeta = 0.2 * (1.0 + (t_iter as f64 * std::f64::consts::PI / horizon as f64).cos());
    // cos(pi) is -1 only up to rounding.
    if t_iter == horizon {
        0.0
    } else {
        zeta
    }
}

/// Base schedule `eta_0 * decay^epoch`.
pub fn base_lr(eta0: f64, decay: f64, epoch: u64) -> f64 {
    eta0 * decay.powi(epoch.min(i32::MAX as u64) as i32)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// `lambda * sum(w^2)`.
    #[default]
    L2,
    /// `lambda * sum(|w|)`.
    L1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedLayer {
    pub layer: usize,
    pub indices: Vec<usize>,
}

/// Marked low-magnitude weights plus the schedule parameters of one extrusion phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrusionPlan {
    pub marked: Vec<MarkedLayer>,
    pub lambda: f64,
    pub penalty: Penalty,
    /// Local optimizer steps available in the adjustment round.
    pub t_budget: u64,
    pub eta0: f64,
    pub created_at: u64,
}

impl ExtrusionPlan {
    pub fn empty() -> Self {
        Self {
            marked: Vec::new(),
            lambda: 0.0,
            penalty: Penalty::L2,
            t_budget: 0,
            eta0: 0.0,
            created_at: 0,
        }
    }

    pub fn with_schedule(mut self, lambda: f64, penalty: Penalty, t_budget: u64, eta0: f64) -> Self {
        self.lambda = lambda;
        self.penalty = penalty;
        self.t_budget = t_budget;
        self.eta0 = eta0;
        self
    }

    pub fn marked_count(&self) -> usize {
        self.marked.iter().map(|m| m.indices.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.marked_count() == 0
    }

    pub fn layer(&self, layer: usize) -> Option<&[usize]> {
        self.marked.iter().find(|m| m.layer == layer).map(|m| m.indices.as_slice())
    }
}

/// `round(zeta * n)` entries of `candidates`, ranked by ascending `key`, ties by index.
pub(crate) fn smallest_by<F: Fn(usize) -> f64>(candidates: &[usize], count: usize, key: F) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    c.truncate(count);
    c.sort_unstable();
    c
}

/// Number of weights marked (and later dropped) in a layer with `unpruned` survivors.
pub fn adjust_count(zeta: f64, unpruned: usize) -> usize {
    ((zeta * unpruned as f64).round() as usize).min(unpruned)
}

/// Marks, per prunable layer, the `round(zeta * n_l)` unpruned weights of
/// smallest magnitude. Pruned entries are never candidates.
pub fn mark_low_magnitude(model: &SparseModel, zeta: f64) -> Result<ExtrusionPlan> {
    let mut marked = Vec::new();
    for l in model.prunable_layers() {
        let w = &model.params(l).unwrap().weight;
        let unpruned = w.mask().unpruned_indices();
        let count = adjust_count(zeta, unpruned.len());
        if count == 0 {
            continue;
        }
        if count >= unpruned.len() {
            return Err(Error::LayerExhaustion {
                layer: l,
                marked: count,
                unpruned: unpruned.len(),
            });
        }
        let values = w.values();
        let indices = smallest_by(&unpruned, count, |i| values[i].abs());
        marked.push(MarkedLayer { layer: l, indices });
    }
    Ok(ExtrusionPlan {
        marked,
        ..ExtrusionPlan::empty()
    })
}

/// Euclidean norm of all marked weights across layers.
pub fn theta_low_norm(model: &SparseModel, plan: &ExtrusionPlan) -> f64 {
    plan.marked
        .iter()
        .flat_map(|m| {
            let v = model.params(m.layer).unwrap().weight.values();
            m.indices.iter().map(move |&i| v[i] * v[i])
        })
        .sum::<f64>()
        .sqrt()
}

/// Base loss plus the penalty on marked weights.
pub fn surrogate_loss(base_loss: f64, model: &SparseModel, plan: &ExtrusionPlan) -> f64 {
    let penalty: f64 = plan
        .marked
        .iter()
        .flat_map(|m| {
            let v = model.params(m.layer).unwrap().weight.values();
            m.indices.iter().map(move |&i| v[i])
        })
        .map(|w| match plan.penalty {
            Penalty::L2 => w * w,
            Penalty::L1 => w.abs(),
        })
        .sum();
    base_loss + plan.lambda * penalty
}

/// Adds the penalty gradient (`2 lambda w` or `lambda sign(w)`) at marked positions.
pub fn add_surrogate_grad(grads: &mut GradientSet, model: &SparseModel, plan: &ExtrusionPlan) {
    if plan.lambda == 0.0 {
        return;
    }
    for m in &plan.marked {
        let v = model.params(m.layer).unwrap().weight.values();
        if let Some(g) = grads.layers[m.layer].as_mut() {
            for &i in &m.indices {
                g.weight[i] += match plan.penalty {
                    Penalty::L2 => 2.0 * plan.lambda * v[i],
                    Penalty::L1 if v[i] == 0.0 => 0.0,
                    Penalty::L1 => plan.lambda * v[i].signum(),
                };
            }
        }
    }
}

/// REX factor `(2T - 2t) / (2T - t)`, zero outside `[0, T]`.
pub fn rex_factor(t: u64, t_budget: u64) -> f64 {
    if t_budget == 0 || t > t_budget {
        return 0.0;
    }
    let (t, tb) = (t as f64, t_budget as f64);
    (2.0 * tb - 2.0 * t) / (2.0 * tb - t)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Budget-aware learning rate at local step `t`.
pub fn budget_lr(t: u64, plan: &ExtrusionPlan, theta_low_norm: f64) -> f64 {
    rex_factor(t, plan.t_budget) * (2.0 * sigmoid(theta_low_norm) - 1.0) * plan.eta0
}

/// `max(eta, beta)` while extruding, `eta` otherwise.
pub fn effective_lr(eta: f64, beta: f64, extruding: bool) -> f64 {
    if extruding {
        eta.max(beta)
    } else {
        eta
    }
}

/// Per-client schedule state for one extrusion phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub step: u64,
    pub eta: f64,
    pub theta_low_norm: f64,
}

impl ScheduleState {
    pub fn beta(&self, plan: &ExtrusionPlan) -> f64 {
        budget_lr(self.step, plan, self.theta_low_norm)
    }

    pub fn mu(&self, plan: &ExtrusionPlan) -> f64 {
        effective_lr(self.eta, self.beta(plan), true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, SparseModel};
    use crate::sparse::{Mask, MaskedTensor};

    fn model_with(values: Vec<f64>, mask: Vec<bool>) -> SparseModel {
        let n = values.len();
        let mut m = SparseModel::new(
            &[n],
            vec![LayerSpec::Linear {
                in_features: n,
                out_features: 1,
            }],
            0,
        )
        .unwrap();
        m.params_mut(0).unwrap().weight =
            MaskedTensor::new(values, Mask::from_bits(&[1, n], mask).unwrap()).unwrap();
        m
    }

    #[test]
    fn adjustment_rate_endpoints() {
        assert_eq!(adjustment_rate(0, 300, 10), 0.4);
        assert_eq!(adjustment_rate(3000, 300, 10), 0.0);
        assert!((adjustment_rate(1500, 300, 10) - 0.2).abs() < 1e-15);
        assert_eq!(adjustment_rate(3001, 300, 10), 0.0);
    }

    #[test]
    fn marks_smallest_magnitudes() {
        let m = model_with(vec![0.1, -0.9, 0.05, 0.7], vec![true; 4]);
        let plan = mark_low_magnitude(&m, 0.5).unwrap();
        assert_eq!(plan.layer(0).unwrap(), &[0, 2]);
        assert!(mark_low_magnitude(&m, 0.0).unwrap().is_empty());
    }

    #[test]
    fn pruned_entries_are_not_candidates() {
        let m = model_with(vec![0.0, 0.3, 0.2, 0.9], vec![false, true, true, true]);
        let plan = mark_low_magnitude(&m, 0.34).unwrap();
        assert_eq!(plan.layer(0).unwrap(), &[2]);
    }

    #[test]
    fn exhausting_a_layer_is_an_error() {
        let m = model_with(vec![0.3, 0.2], vec![true, true]);
        assert!(matches!(mark_low_magnitude(&m, 1.0), Err(Error::LayerExhaustion { .. })));
    }

    #[test]
    fn surrogate_loss_adds_squared_marked_weights() {
        let m = model_with(vec![0.3, -0.4, 5.0], vec![true; 3]);
        let mut plan = mark_low_magnitude(&m, 0.67).unwrap().with_schedule(1.0, Penalty::L2, 10, 1.0);
        assert!((surrogate_loss(2.0, &m, &plan) - 2.25).abs() < 1e-15);
        plan.lambda = 0.0;
        assert_eq!(surrogate_loss(2.0, &m, &plan), 2.0);
    }

    #[test]
    fn budget_lr_cases() {
        let plan = ExtrusionPlan::empty().with_schedule(0.1, Penalty::L2, 20, 1.0);
        assert_eq!(budget_lr(0, &plan, 0.0), 0.0);
        assert_eq!(budget_lr(20, &plan, 3.0), 0.0);
        let b = budget_lr(0, &plan, 2.0);
        assert!((b - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert_eq!(effective_lr(0.3, b, true), b);
        assert_eq!(effective_lr(0.01, 0.5, true), 0.5);
        assert_eq!(effective_lr(0.9, 0.1, true), 0.9);
        assert_eq!(effective_lr(0.01, 0.5, false), 0.01);
    }

    #[test]
    fn rex_factor_decreases() {
        let mut prev = f64::INFINITY;
        for t in 0..=50 {
            let p = rex_factor(t, 50);
            assert!(p < prev);
            prev = p;
        }
        assert_eq!(rex_factor(0, 50), 1.0);
    }
}
