//! End-to-end checks of the command layer on tiny corpora: output files,
//! schema round trips, determinism, pairing guarantees, CSV/JSON agreement.

use std::path::PathBuf;

use patchshuffle_core::data::{load_idx, PollutionKind, PollutionSpec, PollutionTarget};
use patchshuffle_harness::config::{DataSource, ExperimentConfig};
use patchshuffle_harness::report::{RobustnessReport, RunReport, SweepReport};
use patchshuffle_harness::run::{gradcheck_op, pollute_op, robustness, run, sweep};
use patchshuffle_core::shuffle::ShuffleConfig;

fn tiny_config(out: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 2;
    cfg.train.seeds = vec![1];
    cfg.train.batch_size = 16;
    cfg.data = DataSource::Synthetic {
        train: 48,
        test: 32,
        seed: 7,
    };
    cfg.eval_batch = 32;
    cfg.out_dir = out;
    cfg
}

#[test]
fn run_writes_report_and_curves_that_mirror_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path().to_path_buf());
    let report = run(&cfg).unwrap();
    assert_eq!(report.command, "run");
    assert!(!report.any_failed);
    assert_eq!(report.seeds.len(), 1);
    assert_eq!(report.seeds[0].baseline.train_loss.len(), 2);

    let from_disk: RunReport =
        patchshuffle_harness::run::read_json(&dir.path().join("report.json")).unwrap();
    let mut in_memory = report.clone();
    in_memory.wall_seconds = from_disk.wall_seconds;
    assert_eq!(from_disk, in_memory);

    let csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5);
        let seed: u64 = f[0].parse().unwrap();
        let epoch: usize = f[2].parse::<usize>().unwrap() - 1;
        let sr = report.seeds.iter().find(|s| s.seed == seed).unwrap();
        let rec = match f[1] {
            "baseline" => &sr.baseline,
            "patchshuffle" => &sr.patchshuffle,
            other => panic!("unknown arm {other}"),
        };
        assert_eq!(f[3].parse::<f64>().unwrap(), rec.train_loss[epoch]);
        assert_eq!(f[4].parse::<f64>().unwrap(), rec.test_error[epoch]);
        rows += 1;
    }
    assert_eq!(rows, 2 * 2, "one row per (arm, epoch)");
}

#[test]
fn run_is_deterministic_modulo_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path().to_path_buf());
    let mut a = run(&cfg).unwrap();
    let mut b = run(&cfg).unwrap();
    assert_ne!(a.wall_seconds, 0.0);
    a.wall_seconds = 0.0;
    b.wall_seconds = 0.0;
    assert_eq!(a, b);
}

#[test]
fn zero_epsilon_makes_both_arms_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf());
    cfg.shuffle.epsilon = 0.0;
    let report = run(&cfg).unwrap();
    for sr in &report.seeds {
        assert_eq!(sr.baseline, sr.patchshuffle);
    }
    assert_eq!(report.mean_gap, 0.0);
}

#[test]
fn one_by_one_sweep_reduces_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path().join("run"));
    let run_report = run(&cfg).unwrap();

    let mut sweep_cfg = cfg.clone();
    sweep_cfg.out_dir = dir.path().join("sweep");
    let sweep_report = sweep(
        &sweep_cfg,
        &[cfg.shuffle.epsilon],
        &[(cfg.shuffle.patch_h, cfg.shuffle.patch_w)],
    )
    .unwrap();

    assert_eq!(sweep_report.cells.len(), 1);
    for (i, sr) in run_report.seeds.iter().enumerate() {
        assert_eq!(sweep_report.baseline.per_seed[i].record, sr.baseline);
        assert_eq!(sweep_report.cells[0].arm.per_seed[i].record, sr.patchshuffle);
    }
}

#[test]
fn sweep_grid_has_cross_product_plus_baseline_and_exact_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf());
    cfg.train.epochs = 1;
    let epsilons = [0.1, 0.9];
    let patches = [(2, 2), (4, 4)];
    let report = sweep(&cfg, &epsilons, &patches).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert_eq!(report.row_min.len(), 2);
    assert_eq!(report.col_min.len(), 2);
    for (ri, &rm) in report.row_min.iter().enumerate() {
        let row: Vec<f64> = (0..2)
            .map(|c| report.cells[ri * 2 + c].arm.mean_final_error)
            .collect();
        assert_eq!(rm, row.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epsilon,2x2,4x4,row_min");
    assert_eq!(lines.len(), 1 + 2 + 2);
    for (ri, line) in lines[1..3].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0].parse::<f64>().unwrap(), epsilons[ri]);
        for ci in 0..2 {
            assert_eq!(
                f[1 + ci].parse::<f64>().unwrap(),
                report.cells[ri * 2 + ci].arm.mean_final_error,
                "grid cell must equal the JSON field exactly"
            );
        }
        assert_eq!(f[3].parse::<f64>().unwrap(), report.row_min[ri]);
    }
    let col: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(col[0], "col_min");
    assert_eq!(col[1].parse::<f64>().unwrap(), report.col_min[0]);
    let base: Vec<&str> = lines[4].split(',').collect();
    assert_eq!(base[0], "baseline");
    assert_eq!(
        base[1].parse::<f64>().unwrap(),
        report.baseline.mean_final_error
    );

    let from_disk: SweepReport =
        patchshuffle_harness::run::read_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(from_disk.cells.len(), report.cells.len());
}

#[test]
fn robustness_emits_four_arms_per_tau() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf());
    cfg.train.epochs = 1;
    cfg.pollution = Some(PollutionSpec {
        kind: PollutionKind::SaltPepper { tau1: 0.1 },
        target: PollutionTarget::TrainAndTest,
    });
    let report = robustness(&cfg, &[0.3]).unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = &report.cells[0];
    assert_eq!(cell.tau, 0.3);
    for arm in [
        &cell.clean_train_baseline,
        &cell.clean_train_patchshuffle,
        &cell.polluted_train_baseline,
        &cell.polluted_train_patchshuffle,
    ] {
        assert_eq!(arm.per_seed.len(), 1);
        assert!(!arm.any_failed);
    }
    assert_ne!(
        cell.clean_train_baseline.per_seed[0].record,
        cell.polluted_train_baseline.per_seed[0].record,
        "polluted-train arm must see different data"
    );

    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "tau,clean_train_baseline,clean_train_patchshuffle,polluted_train_baseline,polluted_train_patchshuffle"
    );
    let f: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(f[0].parse::<f64>().unwrap(), 0.3);
    assert_eq!(
        f[1].parse::<f64>().unwrap(),
        cell.clean_train_baseline.mean_final_error
    );
    assert_eq!(
        f[4].parse::<f64>().unwrap(),
        cell.polluted_train_patchshuffle.mean_final_error
    );

    let from_disk: RobustnessReport =
        patchshuffle_harness::run::read_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(from_disk.taus, vec![0.3]);
}

#[test]
fn robustness_requires_a_pollution_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path().to_path_buf());
    assert!(robustness(&cfg, &[0.1]).is_err());
}

#[test]
fn pollute_exports_loadable_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf());
    cfg.pollution = Some(PollutionSpec {
        kind: PollutionKind::Occlusion { tau2: 0.05, block: 3 },
        target: PollutionTarget::TestOnly,
    });
    let outcome = pollute_op(&cfg).unwrap();
    assert_eq!(outcome.train_altered_fraction, 0.0);
    assert!(outcome.test_altered_fraction > 0.0);

    let test = load_idx(
        dir.path().join("test-images.idx"),
        dir.path().join("test-labels.idx"),
    )
    .unwrap();
    assert_eq!(test.len(), 32);
    let train = load_idx(
        dir.path().join("train-images.idx"),
        dir.path().join("train-labels.idx"),
    )
    .unwrap();
    assert_eq!(train.len(), 48);
}

#[test]
fn gradcheck_op_passes_on_micro_and_rejects_large_models() {
    let outcome = gradcheck_op("lenet_micro", Some("111"), ShuffleConfig::new(1.0, 2, 2), 3)
        .unwrap();
    assert!(outcome.passed, "worst {} = {}", outcome.worst, outcome.max_rel_error);
    assert_eq!(outcome.params, 650);
    assert!(outcome.checks > 650, "must also check input gradients");

    assert!(gradcheck_op("lenet", None, ShuffleConfig::new(1.0, 2, 2), 3).is_err());
}

#[test]
fn failed_arm_is_reported_and_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf());
    cfg.train.lr = 1e12;
    let report = run(&cfg).unwrap();
    assert!(report.any_failed);
    assert!(report.seeds[0].baseline.failed.is_some());
    assert_eq!(report.seeds[0].baseline.final_error, 1.0);
}
