//! Cost formulas against hand tallies.

use fedmef::cost::{
    comm_bits, flops_of_model, memory_footprint, resnet18_cifar, total_activations, total_weights, training_flops, CostInputs,
    CostReport, Framework, ReportSettings,
};
use fedmef::sparse::{storage_bits, CompressionScheme};

/// Multiply-accumulates of ResNet18 on a 32x32 input, tallied by hand per stage.
const STEM: u64 = 27 * 64 * 32 * 32; // 1,769,472
const STAGE1: u64 = 4 * 9 * 64 * 64 * 32 * 32; // 150,994,944
// Stage entry conv + three same-width convs + 1x1 projection; equal for stages 2-4.
const STAGE2: u64 = 9 * 64 * 128 * 256 + 3 * 9 * 128 * 128 * 256 + 64 * 128 * 256;
const STAGE3: u64 = 9 * 128 * 256 * 64 + 3 * 9 * 256 * 256 * 64 + 128 * 256 * 64;
const STAGE4: u64 = 9 * 256 * 512 * 16 + 3 * 9 * 512 * 512 * 16 + 256 * 512 * 16;
const FC: u64 = 5120;

#[test]
fn resnet18_matches_hand_tally() {
    assert_eq!(STAGE2, 134_217_728);
    assert_eq!(STAGE3, 134_217_728);
    assert_eq!(STAGE4, 134_217_728);
    let macs = STEM + STAGE1 + STAGE2 + STAGE3 + STAGE4 + FC;
    assert_eq!(macs, 555_422_720);

    let layers = resnet18_cifar();
    let (f_d, f_s) = flops_of_model(&layers, &vec![0.1; layers.len()]).unwrap();
    assert_eq!(f_d, 1_110_845_440.0);
    assert!((f_s - 0.1 * f_d).abs() < 1.0);
    // Distinct cached inputs; each projection shares its block's input.
    assert_eq!(
        total_activations(&layers),
        3072 + 4 * 65536 + (65536 + 3 * 32768) + (32768 + 3 * 16384) + (16384 + 3 * 8192) + 512
    );
    assert_eq!(total_activations(&layers), 552_448);
    assert_eq!(total_weights(&layers), 11_164_352);
}

#[test]
fn uniform_density_ratios_follow_closed_form() {
    // With F_s = 0.1 F_d and E = 10, FedTiny-like costs 3*0.1*9 + 0.1 + 2 = 4.8 F_d
    // against 30 F_d for FedAvg.
    let r = CostReport::build(
        &resnet18_cifar(),
        &ReportSettings {
            local_iters: 10,
            ..ReportSettings::default()
        },
    )
    .unwrap();
    assert!((r.row(Framework::FedTiny).flops_ratio - 0.16).abs() < 1e-9);
    assert!((r.row(Framework::StaticPrune).flops_ratio - 0.1).abs() < 1e-9);
    let gap = r.row(Framework::FedMef).flops_ratio - r.row(Framework::FedTiny).flops_ratio;
    let f_o = r.inputs.flops_overhead.unwrap();
    assert!((gap - 28.0 * f_o / (30.0 * 1_110_845_440.0)).abs() < 1e-12);
}

#[test]
fn symbolic_memory_case() {
    let (p_d, a_d) = (1_000_000.0, 4_000_000.0);
    let i = CostInputs {
        param_dense_bits: Some(p_d),
        param_sparse_bits: Some(0.1 * p_d),
        act_dense_bits: Some(a_d),
        act_sparse_bits: Some(0.15 * a_d),
        top_k_bits: Some(5_000.0),
        ..Default::default()
    };
    assert_eq!(memory_footprint(Framework::FedAvg, &i).unwrap(), 10_000_000.0);
    assert_eq!(memory_footprint(Framework::StaticPrune, &i).unwrap(), 8_200_000.0);
    assert_eq!(memory_footprint(Framework::FedTiny, &i).unwrap(), 8_205_000.0);
    assert_eq!(memory_footprint(Framework::FedMef, &i).unwrap(), 4_805_000.0);
}

#[test]
fn exchange_hand_case() {
    // A 10x10 layer at 10% density goes out as COO; 40% of its survivors as TopK.
    let o_d = storage_bits(100, 100, 32, CompressionScheme::Dense, 10, 10).unwrap() as f64;
    let o_s = storage_bits(100, 10, 32, CompressionScheme::Coo, 10, 10).unwrap() as f64;
    let o_xi = storage_bits(100, 4, 32, CompressionScheme::Coo, 10, 10).unwrap() as f64;
    assert_eq!((o_d, o_s, o_xi), (3200.0, 390.0, 156.0));
    assert_eq!(comm_bits(Framework::FedAvg, o_d, o_s, o_xi), 6400.0);
    assert_eq!(comm_bits(Framework::FedDst, o_d, o_s, o_xi), 780.0);
    assert_eq!(comm_bits(Framework::FedMef, o_d, o_s, o_xi), 936.0);
}

#[test]
fn one_iteration_costs_sparse_step_plus_dense_gradient() {
    assert_eq!(training_flops(Framework::FedTiny, 100.0, 10.0, 0.0, 1).unwrap(), 210.0);
}
