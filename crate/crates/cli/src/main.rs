//! Command-line driver: run experiment matrices, the oracle self-checks and
//! the cost table.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedmef::experiment::{cost_report_csv, run_checks, run_matrix, CheckSizes, ExperimentConfig, ExperimentSummary};
use fedmef::fl::Variant;

#[derive(Debug, Parser)]
#[command(name = "fedmef", version, about = "Federated dynamic-pruning simulator")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, env = "FEDMEF_OUTPUT_ROOT", global = true, default_value = ".")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured (variant, seed) cell and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this variant.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Run the oracle self-checks and print a pass/fail table.
    Check,
    /// Print the cost table as CSV.
    CostReport {
        #[arg(long)]
        config: PathBuf,
    },
}

fn output_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(&cfg.run.output_dir)
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_run(root: &Path, path: &Path, seed: Option<u64>, variant: Option<Variant>) -> Result<()> {
    let cfg = ExperimentConfig::load(path)?;
    let seeds = seed.map_or_else(|| cfg.run.seeds.clone(), |s| vec![s]);
    let variants = variant.map_or_else(|| cfg.run.variants.clone(), |v| vec![v]);
    let out = output_dir(root, &cfg);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let summary = run_matrix(&cfg, &variants, &seeds, &config_base(path), &out)?;
    for s in &summary.variants {
        let drop = s
            .post_adjust_drop_mean
            .map_or_else(|| "-".to_string(), |d| format!("{d:+.4}"));
        println!(
            "{:<12} seeds {:>2}  final accuracy {:.4} ± {:.4}  mean post-adjust drop {drop}",
            s.variant.name(),
            s.seeds,
            s.final_accuracy_mean,
            s.final_accuracy_std
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_check() -> Result<bool> {
    let results = run_checks(CheckSizes::default())?;
    let width = results.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &results {
        println!("{} {:<width$}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(results.iter().all(|c| c.passed))
}

fn cmd_cost_report(root: &Path, path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path)?;
    let summary_path = output_dir(root, &cfg).join("summary.json");
    let summary: Option<ExperimentSummary> = match std::fs::read_to_string(&summary_path) {
        Ok(text) => Some(serde_json::from_str(&text).with_context(|| format!("reading {}", summary_path.display()))?),
        Err(_) => None,
    };
    print!("{}", cost_report_csv(&cfg, summary.as_ref())?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, seed, variant } => cmd_run(&cli.output_root, config, *seed, *variant),
        Command::Check => cmd_check().and_then(|ok| if ok { Ok(()) } else { bail!("some checks failed") }),
        Command::CostReport { config } => cmd_cost_report(&cli.output_root, config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
