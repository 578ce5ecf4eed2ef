use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use patchshuffle_core::shuffle::ShuffleConfig;
use patchshuffle_harness::config::{parse_mode, parse_patch, ExperimentConfig, Overrides};
use patchshuffle_harness::run as ops;

#[derive(Parser)]
#[command(
    name = "patchshuffle",
    about = "PatchShuffle regularization experiments: paired baseline/shuffle training arms",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config; every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shuffle probability.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Patch size: K or HxW.
    #[arg(long)]
    patch: Option<String>,
    /// Permutation family.
    #[arg(long, value_parser = ["full", "rowcol"])]
    mode: Option<String>,
    /// Shuffle placement mask: one char per insertion point, input first.
    #[arg(long)]
    layers: Option<String>,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let overrides = Overrides {
            epsilon: self.epsilon,
            patch: self.patch.as_deref().map(parse_patch).transpose()?,
            mode: self.mode.as_deref().map(parse_mode).transpose()?,
            layers: self.layers.clone(),
            seed: self.seed,
            out: self.out.clone(),
        };
        Ok(ExperimentConfig::from_cli(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train paired baseline/PatchShuffle arms over the configured seeds.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Cross product of epsilons and patch sizes plus a baseline cell.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
        epsilons: Vec<f64>,
        /// Comma-separated patch sizes, each K or HxW.
        #[arg(long, value_delimiter = ',', default_value = "2,4")]
        patches: Vec<String>,
    },
    /// Four arms per pollution strength, tested on the polluted test split.
    Robustness {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3")]
        taus: Vec<f64>,
    },
    /// Finite-difference gradient check on a small built-in model.
    Gradcheck {
        #[arg(long, default_value = "lenet_micro")]
        model: String,
        /// Optional shuffle placement mask; omitted = no shuffle layers.
        #[arg(long)]
        layers: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value = "2")]
        patch: String,
        #[arg(long, value_parser = ["full", "rowcol"], default_value = "full")]
        mode: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Apply the configured pollution and export IDX files.
    Pollute {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(failed_arms) => {
            if failed_arms {
                eprintln!("error: at least one training arm failed; see report.json");
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> anyhow::Result<bool> {
    match Cli::parse().cmd {
        Cmd::Run { common } => {
            let cfg = common.config()?;
            let report = ops::run(&cfg).context("run failed")?;
            println!(
                "baseline {:.4} ± {:.4}  patchshuffle {:.4} ± {:.4}  gap {:+.4}  ({} seeds, {:.1}s)",
                report.baseline.mean_final_error,
                report.baseline.std_final_error,
                report.patchshuffle.mean_final_error,
                report.patchshuffle.std_final_error,
                report.mean_gap,
                report.seeds.len(),
                report.wall_seconds,
            );
            println!("wrote {}", cfg.out_dir.join("report.json").display());
            Ok(report.any_failed)
        }
        Cmd::Sweep {
            common,
            epsilons,
            patches,
        } => {
            let cfg = common.config()?;
            let patches = patches
                .iter()
                .map(|p| parse_patch(p))
                .collect::<Result<Vec<_>, _>>()?;
            let report = ops::sweep(&cfg, &epsilons, &patches).context("sweep failed")?;
            println!(
                "{} cells + baseline, best cell {:.4}, baseline {:.4} ({:.1}s)",
                report.cells.len(),
                report
                    .cells
                    .iter()
                    .map(|c| c.arm.mean_final_error)
                    .fold(f64::INFINITY, f64::min),
                report.baseline.mean_final_error,
                report.wall_seconds,
            );
            println!("wrote {}", cfg.out_dir.join("grid.csv").display());
            Ok(report.any_failed)
        }
        Cmd::Robustness { common, taus } => {
            let cfg = common.config()?;
            let report = ops::robustness(&cfg, &taus).context("robustness failed")?;
            for cell in &report.cells {
                println!(
                    "tau {:<5} clean: base {:.4} ps {:.4}  polluted: base {:.4} ps {:.4}",
                    cell.tau,
                    cell.clean_train_baseline.mean_final_error,
                    cell.clean_train_patchshuffle.mean_final_error,
                    cell.polluted_train_baseline.mean_final_error,
                    cell.polluted_train_patchshuffle.mean_final_error,
                );
            }
            println!("wrote {}", cfg.out_dir.join("report.json").display());
            Ok(report.any_failed)
        }
        Cmd::Gradcheck {
            model,
            layers,
            epsilon,
            patch,
            mode,
            seed,
        } => {
            let (patch_h, patch_w) = parse_patch(&patch)?;
            let shuffle = ShuffleConfig {
                epsilon,
                patch_h,
                patch_w,
                mode: parse_mode(&mode)?,
                ..ShuffleConfig::new(epsilon, patch_h, patch_w)
            };
            let outcome = ops::gradcheck_op(&model, layers.as_deref(), shuffle, seed)?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
            Ok(false)
        }
        Cmd::Pollute { common } => {
            let cfg = common.config()?;
            let outcome = ops::pollute_op(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
            Ok(false)
        }
    }
}
