//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines always
//! print under `cargo test`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedmef::bae::adjust_count;
use fedmef::cost::{comm_bits, resnet18_cifar, CostReport, Framework, ReportSettings};
use fedmef::experiment::{
    codec_boundary_failures, codec_failures, expected_bits, gradient_error, nsconv_moment_errors, run_cell,
    sap_gradient_gap, schedule_violations, top_k_mismatches, DataSection, ExperimentConfig,
};
use fedmef::fl::{initial_model, RunResult, Variant};
use fedmef::nn::{channel_moment_check, SparseModel, ChannelMomentSetup};
use fedmef::sap::{cache_storage_bits, SapConfig};
use fedmef::sparse::{ceil_log2, matrix_dims};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig::load(&workspace_root().join("configs/desk.toml")).expect("desk config loads")
}

/// The desk setup the protocol criteria are stated for.
fn desk_matches_statement(cfg: &ExperimentConfig) -> Result<(), String> {
    let f = &cfg.federation;
    let shape_ok = cfg.model.input_shape == [1, 16, 16];
    let classes_ok = matches!(cfg.data, DataSection::Synthetic { classes: 3, .. });
    let fed_ok = (f.clients, f.alpha, f.local_epochs, f.rounds, f.adjust_period, f.adjust_stop) == (8, 0.5, 2, 60, 5, 40);
    if shape_ok && classes_ok && fed_ok && cfg.training.mask_sparsity == 0.9 {
        Ok(())
    } else {
        Err("configs/desk.toml departs from the stated desk setup".into())
    }
}

struct Timed {
    result: RunResult,
    elapsed: Duration,
}

fn run_timed(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> Timed {
    let start = Instant::now();
    let result = run_cell(cfg, variant, seed, &workspace_root()).expect("desk run completes");
    Timed {
        result,
        elapsed: start.elapsed(),
    }
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in [2, 7] {
        let (n, w) = gradient_error(seed).expect("gradient check runs");
        worst = worst.max(w);
        checked += n;
    }
    let t = start.elapsed();
    verdict(
        worst < 1e-4 && t < Duration::from_secs(60),
        format!("{checked} parameters, worst relative error {worst:.2e}, {:.1}s", t.as_secs_f64()),
    )
}

fn nsconv_properties() -> Verdict {
    let (c, m, v) = nsconv_moment_errors(11).expect("moment check runs");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = channel_moment_check(&ChannelMomentSetup::default(), 10_000, &mut rng).expect("monte carlo runs");
    let centered = s.mean.abs() <= 3.0 * s.mean_std_error;
    let control_shift = s.control_mean > 3.0 * s.control_mean_std_error;
    verdict(
        c < 1e-10 && m < 1e-10 && v < 1e-6 && centered && control_shift,
        format!(
            "constant-input |out| {c:.1e}, mean err {m:.1e}, var err {v:.1e}; channel mean {:.4} ± {:.4} (3 se), plain control {:.4}",
            s.mean,
            3.0 * s.mean_std_error,
            s.control_mean
        ),
    )
}

fn sap_equivalence() -> Verdict {
    let gap = (0..5).map(|s| sap_gradient_gap(s).expect("gradient gap")).fold(0.0, f64::max);
    let bad = top_k_mismatches(1_000, 31).expect("top-k check");
    verdict(
        gap <= 1e-12 && bad == 0,
        format!("max gradient gap {gap:.1e}; {bad} of 1000 top-k sets differ from full sort"),
    )
}

fn codec_exactness() -> Verdict {
    let (inexact, miscounted) = codec_failures(10_000, 41).expect("codec trials");
    let boundary = codec_boundary_failures().expect("boundary cases");
    verdict(
        inexact == 0 && miscounted == 0 && boundary == 0,
        format!("10000 round trips: {inexact} inexact, {miscounted} miscounted; {boundary} boundary mismatches"),
    )
}

fn schedule_endpoints() -> Verdict {
    let bad = schedule_violations();
    verdict(bad.is_empty(), if bad.is_empty() { "all identities exact".to_string() } else { bad.join("; ") })
}

/// Independent maximum per-client exchange, `2 O_s + O_xi`, in bits. Layer
/// densities never change, so the bound holds for every round.
fn exchange_bound(model: &SparseModel, b: u32) -> (f64, f64) {
    let mut o_s = 0u64;
    let mut o_xi = 0u64;
    for l in model.param_layers() {
        let p = model.params(l).unwrap();
        let (n_r, n_c) = matrix_dims(p.weight.shape());
        o_s += expected_bits(n_r, n_c, p.weight.nnz(), b).1;
        o_s += p.bias.as_ref().map_or(0, |v| v.len() as u64 * u64::from(b));
        if model.is_prunable(l) {
            let n = p.weight.len();
            let k = adjust_count(0.4, p.weight.nnz()).min(n - p.weight.nnz()) as u64;
            o_xi += k * (ceil_log2(n as u64) + u64::from(b));
        }
    }
    (o_s as f64, o_xi as f64)
}

fn protocol_invariants(cfg: &ExperimentConfig, run: &Timed) -> Verdict {
    let r = &run.result;
    let model = initial_model(&cfg.round_config(r.seed), Variant::FedMef, &cfg.model.input_shape, &cfg.model.resolved_layers())
        .expect("initial model");
    let (o_s, o_xi) = exchange_bound(&model, cfg.run.value_bits);
    let bound = 2.0 * o_s + o_xi;
    let formula = comm_bits(Framework::FedMef, 0.0, o_s, o_xi);
    let adjusted: Vec<_> = r.rounds.iter().filter(|m| m.adjusted).collect();
    let sparsity_ok = adjusted.iter().all(|m| (m.mask_sparsity - 0.9).abs() < 1e-12);
    let grown_ok = adjusted.iter().filter(|m| m.swaps > 0).all(|m| m.grown_max_abs == Some(0.0));
    let swapped = adjusted.iter().filter(|m| m.swaps > 0).count();
    let max_wire = r.rounds.iter().map(|m| m.wire_bits).max().unwrap_or(0);
    let wire_ok = r.rounds.iter().all(|m| m.wire_bits as f64 <= bound) && bound == formula;
    let time_ok = run.elapsed < Duration::from_secs(600);
    verdict(
        sparsity_ok && grown_ok && wire_ok && swapped > 0 && time_ok,
        format!(
            "{} adjustment rounds ({swapped} with swaps): sparsity exact {sparsity_ok}, grown zero {grown_ok}; \
             max wire {max_wire} <= bound {bound} bits; {:.1}s",
            adjusted.len(),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn mean_drop(r: &RunResult) -> f64 {
    let d: Vec<f64> = r
        .rounds
        .iter()
        .filter(|m| m.swaps > 0)
        .filter_map(|m| m.post_adjust_drop)
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

fn bae_efficacy(fedmef: &[Timed], no_lambda: &[Timed], no_bae: &[Timed]) -> Verdict {
    let mut norms_ok = true;
    let mut ratio_worst = 0.0f64;
    for (a, b) in fedmef.iter().zip(no_lambda) {
        let pairs: Vec<(f64, f64)> = a
            .result
            .rounds
            .iter()
            .zip(&b.result.rounds)
            .filter_map(|(x, y)| Some((x.theta_low_norm?, y.theta_low_norm?)))
            .collect();
        norms_ok &= !pairs.is_empty() && pairs.iter().all(|(x, y)| x < y);
        for (x, y) in pairs {
            ratio_worst = ratio_worst.max(x / y);
        }
    }
    let n = fedmef.len() as f64;
    let drop_mef = fedmef.iter().map(|t| mean_drop(&t.result)).sum::<f64>() / n;
    let drop_nobae = no_bae.iter().map(|t| mean_drop(&t.result)).sum::<f64>() / n;
    let acc_mef = fedmef.iter().map(|t| t.result.final_accuracy()).sum::<f64>() / n;
    let acc_nobae = no_bae.iter().map(|t| t.result.final_accuracy()).sum::<f64>() / n;
    let (a, b, c) = (norms_ok, drop_mef < drop_nobae, acc_mef >= acc_nobae);
    verdict(
        a && b && c,
        format!(
            "(a) {a}: marked norm lambda>0 / lambda=0 at most {ratio_worst:.3}; \
             (b) {b}: mean drop {drop_mef:+.4} vs {drop_nobae:+.4}; \
             (c) {c}: final accuracy {acc_mef:.4} vs {acc_nobae:.4}; {} seeds",
            fedmef.len()
        ),
    )
}

fn sap_memory(cfg: &ExperimentConfig) -> Verdict {
    let model = initial_model(&cfg.round_config(0), Variant::FedMef, &cfg.model.input_shape, &cfg.model.resolved_layers())
        .expect("initial model");
    let (train, _) = cfg.datasets(0, &workspace_root()).expect("desk data");
    let idx: Vec<usize> = (0..cfg.federation.batch_size).collect();
    let (x, _) = train.batch(&idx);
    let b = cfg.run.value_bits;
    let (_, trace) = model
        .forward_train(&x, &SapConfig::new(0.9).unwrap(), b)
        .expect("forward");
    let measured = trace.total_cache_bits();
    let dense = trace.total_dense_bits();
    // Pruned parameter-layer inputs plus one sign bit per ReLU element.
    let mut expected = 0u64;
    let mut via_storage = 0u64;
    for (i, rec) in trace.cache_records().iter().enumerate() {
        match trace.input_cache(rec.layer) {
            Some(cache) => {
                let (n_r, n_c) = matrix_dims(cache.shape());
                expected += expected_bits(n_r, n_c, cache.kept(), b).1;
                via_storage += cache_storage_bits(cache, b, false);
            }
            None => {
                expected += rec.numel as u64;
                via_storage += rec.numel as u64;
                assert!(i > 0, "a sign bitmap cannot be the first record");
            }
        }
    }
    let ratio = dense as f64 / measured as f64;
    verdict(
        ratio >= 3.0 && measured == expected && measured == via_storage,
        format!("batch {}: {measured} vs dense {dense} bits ({ratio:.2}x); closed form {expected}", idx.len()),
    )
}

fn cost_ratios() -> Verdict {
    let settings = ReportSettings {
        mask_sparsity: 0.9,
        local_iters: 10,
        ..ReportSettings::default()
    };
    let r = CostReport::build(&resnet18_cifar(), &settings).expect("cost report");
    let mef = r.row(Framework::FedMef).flops_ratio;
    let tiny = r.row(Framework::FedTiny).flops_ratio;
    let literal = CostReport::build(&resnet18_cifar(), &ReportSettings { batch: 1, ..settings.clone() }).expect("cost report");
    let literal_gap = literal.row(Framework::FedMef).flops_ratio - literal.row(Framework::FedTiny).flops_ratio;
    verdict(
        (0.05..=0.25).contains(&mef) && mef - tiny < 0.01 && mef > tiny,
        format!(
            "FedMef {mef:.4}x, FedTiny-like {tiny:.4}x, gap {:.4} (weight overhead per step over batch {}); \
             charging it per sample gives gap {literal_gap:.4}",
            mef - tiny,
            settings.batch
        ),
    )
}

fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn batch_one(runs: &[Timed]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for t in runs {
        let losses: Vec<f64> = t.result.rounds.iter().map(|m| m.train_loss).collect();
        let (first, last) = (losses[0], *losses.last().unwrap());
        let slope = least_squares_slope(&losses);
        ok &= losses.iter().all(|l| l.is_finite()) && last < first && slope < 0.0;
        parts.push(format!("seed {}: {first:.3} -> {last:.3}", t.result.seed));
    }
    verdict(ok, parts.join(", "))
}

fn main() -> ExitCode {
    let cfg = desk_config();
    if let Err(e) = desk_matches_statement(&cfg) {
        println!("FAIL setup: {e}");
        return ExitCode::FAILURE;
    }
    let no_lambda = ExperimentConfig {
        training: fedmef::experiment::TrainingSection {
            lambda: 0.0,
            ..cfg.training.clone()
        },
        ..cfg.clone()
    };
    let batch1 = ExperimentConfig {
        federation: fedmef::experiment::FederationSection {
            batch_size: 1,
            ..cfg.federation.clone()
        },
        ..cfg.clone()
    };

    let mut verdicts: Vec<(&str, Verdict)> = vec![
        ("1 gradient correctness", gradient_correctness()),
        ("2 normalized conv properties", nsconv_properties()),
        ("3 activation pruning oracles", sap_equivalence()),
        ("4 codec exactness", codec_exactness()),
        ("5 schedule endpoints", schedule_endpoints()),
    ];

    let jobs: Vec<(&ExperimentConfig, Variant, u64)> = SEEDS
        .iter()
        .flat_map(|&s| {
            [
                (&cfg, Variant::FedMef, s),
                (&no_lambda, Variant::FedMef, s),
                (&cfg, Variant::NoBae, s),
                (&batch1, Variant::FedMef, s),
            ]
        })
        .collect();
    let runs: Vec<Timed> = jobs.par_iter().map(|&(c, v, s)| run_timed(c, v, s)).collect();
    let pick = |k: usize| -> Vec<&Timed> { runs.iter().skip(k).step_by(4).collect() };
    let own = |v: Vec<&Timed>| -> Vec<Timed> {
        v.into_iter()
            .map(|t| Timed {
                result: t.result.clone(),
                elapsed: t.elapsed,
            })
            .collect()
    };
    let (fedmef, lambda0, nobae, bs1) = (own(pick(0)), own(pick(1)), own(pick(2)), own(pick(3)));

    verdicts.push(("6 protocol invariants", protocol_invariants(&cfg, &fedmef[0])));
    verdicts.push(("7 extrusion efficacy", bae_efficacy(&fedmef, &lambda0, &nobae)));
    verdicts.push(("8 activation cache memory", sap_memory(&cfg)));
    verdicts.push(("9 cost ratios", cost_ratios()));
    verdicts.push(("10 batch-size-1 robustness", batch_one(&bs1)));

    let mut all = true;
    for (name, v) in &verdicts {
        println!("{} criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        all &= v.passed;
    }
    println!("{} of {} criteria passed", verdicts.iter().filter(|(_, v)| v.passed).count(), verdicts.len());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
