//! Experiment configuration, run matrices and metrics files.

use std::path::Path;

use fedmef::experiment::{cost_report_csv, run_matrix, ExperimentConfig, METRICS_COLUMNS};
use fedmef::fl::Variant;

const TINY: &str = r#"
[run]
seeds = [0]
output_dir = "out"

[data]
source = "synthetic"
classes = 3
train_per_class = 12
test_per_class = 10
noise = 0.5
train_seed = 1
test_seed = 2

[federation]
clients = 3
clients_per_round = 3
rounds = 2
local_epochs = 1
batch_size = 8
adjust_period = 1
adjust_stop = 2

[training]
lambda = 1.0
eta0 = 0.1
decay = 0.99
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(TINY).unwrap()
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), METRICS_COLUMNS);
    r.records().map(Result::unwrap).collect()
}

#[test]
fn two_round_config_writes_two_rows_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let variants = [Variant::FedMef, Variant::FedAvgDense];
    let summary = run_matrix(&cfg, &variants, &[0, 1], Path::new("."), dir.path()).unwrap();
    assert_eq!(summary.runs.len(), 4);
    for r in &summary.runs {
        let rows = read_rows(&r.dir.join("metrics.csv"));
        assert_eq!(rows.len(), 2);
        let drop_col = METRICS_COLUMNS.iter().position(|c| *c == "post_adjust_drop").unwrap();
        if r.variant == Variant::FedAvgDense {
            assert!(rows.iter().all(|row| row[drop_col].is_empty()));
        } else {
            assert!(!rows[1][drop_col].is_empty());
        }
    }
    assert!(dir.path().join("summary.json").is_file());
    let back = ExperimentConfig::from_toml_str(&std::fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn ablation_matrix_creates_one_directory_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let variants = [Variant::FedMef, Variant::NoBae, Variant::NoSap];
    let seeds = [0, 1, 2, 3, 4];
    let summary = run_matrix(&tiny(), &variants, &seeds, Path::new("."), dir.path()).unwrap();
    let mut dirs = 0;
    for v in variants {
        for entry in std::fs::read_dir(dir.path().join(v.name())).unwrap() {
            assert!(entry.unwrap().path().join("metrics.csv").is_file());
            dirs += 1;
        }
        assert_eq!(summary.variant(v).unwrap().seeds, 5);
    }
    assert_eq!(dirs, 15);
}

#[test]
fn same_config_and_seed_give_identical_metrics_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        run_matrix(&tiny(), &[Variant::FedMef], &[3], Path::new("."), d.path()).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("FedMef/seed-3/metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.toml", "quick.toml"] {
        let cfg = ExperimentConfig::load(&root.join(name)).unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg, "{name}");
    }
}

#[test]
fn cost_table_has_a_row_per_model_framework_and_sparsity() {
    let text = cost_report_csv(&tiny(), None).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(r.records().count(), 2 * 5 * 3);
}

#[test]
fn invalid_configs_are_rejected_with_a_reason() {
    for (text, needle) in [
        ("[federation]\nclients = 2\nclients_per_round = 3\n", "clients_per_round"),
        ("[run]\nvariants = [\"FedSomething\"]\n", "unknown variant"),
        ("[federation]\nrounds = 5\nadjust_stop = 10\n", "adjust_stop"),
    ] {
        let err = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains(needle), "{err}");
    }
}
