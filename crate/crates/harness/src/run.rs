//! Command implementations behind the CLI: run, sweep, robustness,
//! gradcheck, pollute.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use patchshuffle_core::data::{
    load_idx, save_idx, subtract_mean, Dataset, PollutionKind, PollutionSpec,
};
use patchshuffle_core::nn::gradcheck::check_model;
use patchshuffle_core::nn::ModelSpec;
use patchshuffle_core::rng::StreamRng;
use patchshuffle_core::shuffle::ShuffleConfig;
use patchshuffle_core::tensor::{Shape4, Tensor};

use crate::config::{builtin_model, parse_mask, DataSource, ExperimentConfig};
use crate::report::{
    labeled_curves_csv, mean_std, robustness_grid_csv, run_curves_csv, sweep_grid_csv, ArmCell,
    ArmSummary, RobustnessCell, RobustnessReport, RunReport, SeedArm, SeedRun, SweepCell,
    SweepReport,
};
use crate::train::{train_arm, ArmRecord, STREAM_POLLUTION};
use crate::HarnessError;

/// Largest model the finite-difference gradcheck will accept.
pub const GRADCHECK_PARAM_LIMIT: usize = 2048;

fn load_raw(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), HarnessError> {
    let (train, test) = match &cfg.data {
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        ),
        DataSource::Synthetic { train, test, seed } => {
            crate::synth::synthetic_pair(*train, *test, *seed)
        }
    };
    let train = match cfg.train_subset {
        Some(n) => train.subset(n)?,
        None => train,
    };
    Ok((train, test))
}

fn check_input_shape(model: &ModelSpec, d: &Dataset) -> Result<(), HarnessError> {
    let s = d.image_shape();
    let m = model.input;
    if (s.channels, s.height, s.width) != (m.channels, m.height, m.width) {
        return Err(HarnessError::Config(format!(
            "model expects {}x{}x{} inputs but the data is {}x{}x{}",
            m.channels, m.height, m.width, s.channels, s.height, s.width
        )));
    }
    Ok(())
}

/// Shared preprocessing for run/sweep: load, subset, pollute the splits the
/// pollution target selects (in raw [0, 1] space), then center both splits
/// on the train mean.
fn prepare(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), HarnessError> {
    let (mut train, mut test) = load_raw(cfg)?;
    if let Some(spec) = &cfg.pollution {
        let mut rng = StreamRng::stream(cfg.train.seeds[0], STREAM_POLLUTION);
        if spec.touches_train() {
            train = spec.apply(&train, &mut rng);
        }
        test = spec.apply(&test, &mut rng);
    }
    let (train, test, _mean) = subtract_mean(&train, &test)?;
    Ok((train, test))
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })
}

fn config_echo(cfg: &ExperimentConfig) -> Result<Value, HarnessError> {
    Ok(serde_json::to_value(cfg)?)
}

/// Paired baseline/PatchShuffle arms over every seed.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let (train, test) = prepare(cfg)?;
    let base = cfg.base_model()?;
    let ps = cfg.ps_model()?;
    check_input_shape(&base, &train)?;

    let mut seeds = Vec::new();
    for &seed in &cfg.train.seeds {
        let baseline = train_arm(&base, &train, &test, &cfg.train, seed, cfg.eval_batch);
        let patchshuffle = train_arm(&ps, &train, &test, &cfg.train, seed, cfg.eval_batch);
        seeds.push(SeedRun {
            seed,
            baseline,
            patchshuffle,
        });
    }

    let finals = |pick: fn(&SeedRun) -> &ArmRecord| -> Vec<f64> {
        seeds.iter().map(|s| pick(s).final_error).collect()
    };
    let (bm, bs) = mean_std(&finals(|s| &s.baseline));
    let (pm, ps_std) = mean_std(&finals(|s| &s.patchshuffle));
    let any_failed = seeds
        .iter()
        .any(|s| !s.baseline.ok() || !s.patchshuffle.ok());

    let report = RunReport {
        command: "run".into(),
        config: config_echo(cfg)?,
        seeds,
        baseline: ArmSummary {
            mean_final_error: bm,
            std_final_error: bs,
        },
        patchshuffle: ArmSummary {
            mean_final_error: pm,
            std_final_error: ps_std,
        },
        mean_gap: pm - bm,
        any_failed,
        wall_seconds: t0.elapsed().as_secs_f64(),
    };

    ensure_out_dir(cfg)?;
    write_json_and_curves(cfg, &report, run_curves_csv(&report.seeds))?;
    Ok(report)
}

fn write_json_and_curves(
    cfg: &ExperimentConfig,
    report: &impl Serialize,
    curves: String,
) -> Result<(), HarnessError> {
    crate::report::write_json(&cfg.out_dir.join("report.json"), report)?;
    crate::report::write_text(&cfg.out_dir.join("curves.csv"), &curves)
}

fn arm_cell(
    model: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
) -> ArmCell {
    let per_seed = cfg
        .train
        .seeds
        .iter()
        .map(|&seed| SeedArm {
            seed,
            record: train_arm(model, train, test, &cfg.train, seed, cfg.eval_batch),
        })
        .collect();
    ArmCell::from_seeds(per_seed)
}

/// Cross product of epsilons and patch sizes, plus one shuffle-free baseline
/// cell. Every cell shares the prepared data and the per-seed streams, so a
/// 1x1 sweep reproduces `run` exactly.
pub fn sweep(
    cfg: &ExperimentConfig,
    epsilons: &[f64],
    patches: &[(usize, usize)],
) -> Result<SweepReport, HarnessError> {
    cfg.validate()?;
    if epsilons.is_empty() || patches.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs at least one epsilon and one patch size".into(),
        ));
    }
    let t0 = Instant::now();
    let (train, test) = prepare(cfg)?;
    let base = cfg.base_model()?;
    check_input_shape(&base, &train)?;

    let baseline = arm_cell(&base, &train, &test, cfg);
    let mut cells = Vec::with_capacity(epsilons.len() * patches.len());
    for &epsilon in epsilons {
        for &(patch_h, patch_w) in patches {
            let mut cell_cfg = cfg.clone();
            cell_cfg.shuffle.epsilon = epsilon;
            cell_cfg.shuffle.patch_h = patch_h;
            cell_cfg.shuffle.patch_w = patch_w;
            cell_cfg.shuffle.validate()?;
            let model = cell_cfg.ps_model()?;
            cells.push(SweepCell {
                epsilon,
                patch_h,
                patch_w,
                arm: arm_cell(&model, &train, &test, cfg),
            });
        }
    }

    let cols = patches.len();
    let row_min: Vec<f64> = (0..epsilons.len())
        .map(|r| {
            (0..cols)
                .map(|c| cells[r * cols + c].arm.mean_final_error)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let col_min: Vec<f64> = (0..cols)
        .map(|c| {
            (0..epsilons.len())
                .map(|r| cells[r * cols + c].arm.mean_final_error)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let any_failed = baseline.any_failed || cells.iter().any(|c| c.arm.any_failed);

    let report = SweepReport {
        command: "sweep".into(),
        config: config_echo(cfg)?,
        epsilons: epsilons.to_vec(),
        patches: patches.to_vec(),
        baseline,
        cells,
        row_min,
        col_min,
        any_failed,
        wall_seconds: t0.elapsed().as_secs_f64(),
    };

    ensure_out_dir(cfg)?;
    crate::report::write_json(&cfg.out_dir.join("report.json"), &report)?;
    crate::report::write_text(&cfg.out_dir.join("grid.csv"), &sweep_grid_csv(&report))?;
    let mut labeled: Vec<(String, &ArmCell)> = vec![("baseline".into(), &report.baseline)];
    for c in &report.cells {
        labeled.push((format!("eps{}_p{}x{}", c.epsilon, c.patch_h, c.patch_w), &c.arm));
    }
    crate::report::write_text(
        &cfg.out_dir.join("curves.csv"),
        &labeled_curves_csv(&labeled),
    )?;
    Ok(report)
}

fn with_strength(spec: &PollutionSpec, tau: f64) -> PollutionSpec {
    let kind = match spec.kind {
        PollutionKind::SaltPepper { .. } => PollutionKind::SaltPepper { tau1: tau },
        PollutionKind::Occlusion { block, .. } => PollutionKind::Occlusion { tau2: tau, block },
    };
    PollutionSpec {
        kind,
        target: spec.target,
    }
}

/// Per pollution strength: {clean-train, polluted-train} x {baseline,
/// PatchShuffle}, all evaluated on the polluted test split. The config's
/// pollution entry supplies the noise kind; its strength and target fields
/// are superseded by the sweep itself.
pub fn robustness(cfg: &ExperimentConfig, taus: &[f64]) -> Result<RobustnessReport, HarnessError> {
    cfg.validate()?;
    let spec0 = cfg.pollution.as_ref().ok_or_else(|| {
        HarnessError::Config("robustness requires a pollution entry in the config".into())
    })?;
    if taus.is_empty() {
        return Err(HarnessError::Config("robustness needs at least one tau".into()));
    }
    let t0 = Instant::now();
    let (raw_train, raw_test) = load_raw(cfg)?;
    let base = cfg.base_model()?;
    let ps = cfg.ps_model()?;
    check_input_shape(&base, &raw_train)?;

    let mut pol_rng = StreamRng::stream(cfg.train.seeds[0], STREAM_POLLUTION);
    let mut cells = Vec::with_capacity(taus.len());
    for &tau in taus {
        let spec = with_strength(spec0, tau);
        spec.validate()?;
        let pol_train = spec.apply(&raw_train, &mut pol_rng);
        let pol_test = spec.apply(&raw_test, &mut pol_rng);

        let (clean_tr, clean_te, _) = subtract_mean(&raw_train, &pol_test)?;
        let (pol_tr, pol_te, _) = subtract_mean(&pol_train, &pol_test)?;

        cells.push(RobustnessCell {
            tau,
            clean_train_baseline: arm_cell(&base, &clean_tr, &clean_te, cfg),
            clean_train_patchshuffle: arm_cell(&ps, &clean_tr, &clean_te, cfg),
            polluted_train_baseline: arm_cell(&base, &pol_tr, &pol_te, cfg),
            polluted_train_patchshuffle: arm_cell(&ps, &pol_tr, &pol_te, cfg),
        });
    }

    let any_failed = cells.iter().any(|c| {
        c.clean_train_baseline.any_failed
            || c.clean_train_patchshuffle.any_failed
            || c.polluted_train_baseline.any_failed
            || c.polluted_train_patchshuffle.any_failed
    });
    let report = RobustnessReport {
        command: "robustness".into(),
        config: config_echo(cfg)?,
        taus: taus.to_vec(),
        cells,
        any_failed,
        wall_seconds: t0.elapsed().as_secs_f64(),
    };

    ensure_out_dir(cfg)?;
    crate::report::write_json(&cfg.out_dir.join("report.json"), &report)?;
    crate::report::write_text(
        &cfg.out_dir.join("grid.csv"),
        &robustness_grid_csv(&report),
    )?;
    let mut labeled: Vec<(String, &ArmCell)> = Vec::new();
    for c in &report.cells {
        labeled.push((format!("tau{}_clean_baseline", c.tau), &c.clean_train_baseline));
        labeled.push((
            format!("tau{}_clean_patchshuffle", c.tau),
            &c.clean_train_patchshuffle,
        ));
        labeled.push((
            format!("tau{}_polluted_baseline", c.tau),
            &c.polluted_train_baseline,
        ));
        labeled.push((
            format!("tau{}_polluted_patchshuffle", c.tau),
            &c.polluted_train_patchshuffle,
        ));
    }
    crate::report::write_text(
        &cfg.out_dir.join("curves.csv"),
        &labeled_curves_csv(&labeled),
    )?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    pub model: String,
    pub layer_mask: Option<String>,
    pub params: usize,
    pub checks: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub step: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Finite-difference check of every weight, bias and input gradient on a
/// small model, with shuffle draws frozen and replayed by the checker.
pub fn gradcheck_op(
    model_name: &str,
    layers: Option<&str>,
    shuffle: ShuffleConfig,
    seed: u64,
) -> Result<GradcheckOutcome, HarnessError> {
    let mut model = builtin_model(model_name)?;
    if let Some(mask) = layers {
        model = model.with_patchshuffle(&parse_mask(mask)?, shuffle)?;
    }
    let params = model.param_count()?;
    if params > GRADCHECK_PARAM_LIMIT {
        return Err(HarnessError::Config(format!(
            "gradcheck is limited to {GRADCHECK_PARAM_LIMIT} parameters; {model_name} has {params}"
        )));
    }
    let classes = model.num_classes()?;
    let shape = Shape4::new(2, model.input.channels, model.input.height, model.input.width);
    let mut data_rng = StreamRng::stream(seed, 4);
    let data: Vec<f64> = (0..shape.volume()).map(|_| data_rng.next_f64()).collect();
    let x = Tensor::from_vec(shape, data).expect("uniforms are finite");
    let labels: Vec<u8> = (0..shape.batch).map(|b| (b % classes) as u8).collect();

    let report = check_model(&model, &x, &labels, seed)?;
    Ok(GradcheckOutcome {
        model: model_name.to_string(),
        layer_mask: layers.map(str::to_string),
        params,
        checks: report.checks,
        max_rel_error: report.max_rel_error,
        step: report.step,
        threshold: report.threshold,
        passed: report.passed(),
        worst: report.worst,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolluteOutcome {
    pub train_altered_fraction: f64,
    pub test_altered_fraction: f64,
    pub files: Vec<String>,
}

fn altered_fraction(before: &Dataset, after: &Dataset) -> f64 {
    let a = before.images().data();
    let b = after.images().data();
    let changed = a.iter().zip(b).filter(|(x, y)| x != y).count();
    changed as f64 / a.len() as f64
}

/// Applies the configured pollution and exports the result as IDX files,
/// for eyeballing and for feeding back in through the idx data source.
pub fn pollute_op(cfg: &ExperimentConfig) -> Result<PolluteOutcome, HarnessError> {
    cfg.validate()?;
    let spec = cfg.pollution.ok_or_else(|| {
        HarnessError::Config("pollute requires a pollution entry in the config".into())
    })?;
    let (train, test) = load_raw(cfg)?;
    let mut rng = StreamRng::stream(cfg.train.seeds[0], STREAM_POLLUTION);
    let pol_train = if spec.touches_train() {
        spec.apply(&train, &mut rng)
    } else {
        train.clone()
    };
    let pol_test = spec.apply(&test, &mut rng);

    ensure_out_dir(cfg)?;
    let names = [
        "train-images.idx",
        "train-labels.idx",
        "test-images.idx",
        "test-labels.idx",
    ];
    save_idx(
        &pol_train,
        cfg.out_dir.join(names[0]),
        cfg.out_dir.join(names[1]),
    )?;
    save_idx(
        &pol_test,
        cfg.out_dir.join(names[2]),
        cfg.out_dir.join(names[3]),
    )?;
    Ok(PolluteOutcome {
        train_altered_fraction: altered_fraction(&train, &pol_train),
        test_altered_fraction: altered_fraction(&test, &pol_test),
        files: names
            .iter()
            .map(|n| cfg.out_dir.join(n).to_string_lossy().into_owned())
            .collect(),
    })
}

/// Reads a report back and checks CSV/JSON agreement; used by tests and
/// available to callers that archive reports.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}
