//! Report structures and writers. The JSON report is the source of truth;
//! every number in an emitted CSV is the same f64 as the corresponding JSON
//! field (both sides print shortest-round-trip decimal), so a CSV cell can
//! be checked against the JSON bit for bit after parsing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::train::ArmRecord;
use crate::HarnessError;

/// Paired result for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub baseline: ArmRecord,
    pub patchshuffle: ArmRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean_final_error: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std_final_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// Echo of the fully resolved config the run used.
    pub config: Value,
    pub seeds: Vec<SeedRun>,
    pub baseline: ArmSummary,
    pub patchshuffle: ArmSummary,
    /// patchshuffle minus baseline mean error; negative favors PatchShuffle.
    pub mean_gap: f64,
    pub any_failed: bool,
    /// The only timing field anywhere in a report.
    pub wall_seconds: f64,
}

/// One arm trained across all seeds (sweep and robustness cells).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedArm {
    pub seed: u64,
    pub record: ArmRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmCell {
    pub per_seed: Vec<SeedArm>,
    pub mean_final_error: f64,
    pub std_final_error: f64,
    pub any_failed: bool,
}

impl ArmCell {
    pub fn from_seeds(per_seed: Vec<SeedArm>) -> ArmCell {
        let finals: Vec<f64> = per_seed.iter().map(|s| s.record.final_error).collect();
        let (mean, std) = mean_std(&finals);
        let any_failed = per_seed.iter().any(|s| !s.record.ok());
        ArmCell {
            per_seed,
            mean_final_error: mean,
            std_final_error: std,
            any_failed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub patch_h: usize,
    pub patch_w: usize,
    pub arm: ArmCell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub command: String,
    pub config: Value,
    pub epsilons: Vec<f64>,
    pub patches: Vec<(usize, usize)>,
    /// Shuffle-free control, trained once.
    pub baseline: ArmCell,
    /// Row-major over (epsilon, patch).
    pub cells: Vec<SweepCell>,
    /// Minimum mean error per epsilon row / per patch column.
    pub row_min: Vec<f64>,
    pub col_min: Vec<f64>,
    pub any_failed: bool,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub tau: f64,
    pub clean_train_baseline: ArmCell,
    pub clean_train_patchshuffle: ArmCell,
    pub polluted_train_baseline: ArmCell,
    pub polluted_train_patchshuffle: ArmCell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub command: String,
    pub config: Value,
    pub taus: Vec<f64>,
    pub cells: Vec<RobustnessCell>,
    pub any_failed: bool,
    pub wall_seconds: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Per-epoch curves for a `run` report.
pub fn run_curves_csv(seeds: &[SeedRun]) -> String {
    let mut out = String::from("seed,arm,epoch,train_loss,test_error\n");
    for sr in seeds {
        for (arm, rec) in [("baseline", &sr.baseline), ("patchshuffle", &sr.patchshuffle)] {
            push_curve_rows(&mut out, &format!("{},{arm}", sr.seed), rec);
        }
    }
    out
}

/// Per-epoch curves for sweep/robustness cells; `label` names the cell.
pub fn labeled_curves_csv(cells: &[(String, &ArmCell)]) -> String {
    let mut out = String::from("cell,seed,epoch,train_loss,test_error\n");
    for (label, cell) in cells {
        for sa in &cell.per_seed {
            push_curve_rows(&mut out, &format!("{label},{}", sa.seed), &sa.record);
        }
    }
    out
}

fn push_curve_rows(out: &mut String, prefix: &str, rec: &ArmRecord) {
    for (e, (loss, err)) in rec.train_loss.iter().zip(&rec.test_error).enumerate() {
        out.push_str(&format!("{prefix},{},{loss},{err}\n", e + 1));
    }
}

/// Table 1 layout: epsilon rows by patch columns of PatchShuffle mean error,
/// a row_min column, a col_min row, and a baseline row in the first column.
pub fn sweep_grid_csv(report: &SweepReport) -> String {
    let cols = report.patches.len();
    let mut out = String::from("epsilon");
    for &(h, w) in &report.patches {
        out.push_str(&format!(",{h}x{w}"));
    }
    out.push_str(",row_min\n");
    for (ri, &eps) in report.epsilons.iter().enumerate() {
        out.push_str(&format!("{eps}"));
        for ci in 0..cols {
            out.push_str(&format!(",{}", report.cells[ri * cols + ci].arm.mean_final_error));
        }
        out.push_str(&format!(",{}\n", report.row_min[ri]));
    }
    out.push_str("col_min");
    for ci in 0..cols {
        out.push_str(&format!(",{}", report.col_min[ci]));
    }
    out.push_str(",\nbaseline");
    out.push_str(&format!(",{}", report.baseline.mean_final_error));
    for _ in 1..cols {
        out.push(',');
    }
    out.push_str(",\n");
    out
}

/// One row per tau; the four arm columns are mean final errors.
pub fn robustness_grid_csv(report: &RobustnessReport) -> String {
    let mut out = String::from(
        "tau,clean_train_baseline,clean_train_patchshuffle,polluted_train_baseline,polluted_train_patchshuffle\n",
    );
    for cell in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.tau,
            cell.clean_train_baseline.mean_final_error,
            cell.clean_train_patchshuffle.mean_final_error,
            cell.polluted_train_baseline.mean_final_error,
            cell.polluted_train_patchshuffle.mean_final_error,
        ));
    }
    out
}
