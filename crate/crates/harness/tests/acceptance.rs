//! Acceptance gate: the nine release criteria, one test and one printed
//! PASS line each (run with --nocapture to see them). Tolerances are pinned
//! in the asserts; a failure message is the corresponding FAIL line.

use std::collections::HashMap;
use std::time::Instant;

use patchshuffle_core::data::{occlude, salt_pepper, PollutionKind, PollutionSpec, PollutionTarget};
use patchshuffle_core::nn::{forward, loss_gated, ModelSpec, Parameters, ShuffleDraws};
use patchshuffle_core::rng::StreamRng;
use patchshuffle_core::shuffle::{
    partition_grid, sample_patch_permutation, shuffle_apply_recorded, shuffle_backward,
    shuffle_forward, ShuffleConfig, ShuffleMode, ShuffleScope,
};
use patchshuffle_core::tensor::{Shape4, Tensor};
use patchshuffle_harness::config::{DataSource, ExperimentConfig};
use patchshuffle_harness::run::{gradcheck_op, run, sweep};
use patchshuffle_harness::synth::synthetic_pair;

fn pass(n: usize, name: &str, detail: String) {
    println!("acceptance {n} ({name}): PASS: {detail}");
}

/// Random tensor with all-distinct values so multiset comparisons are strict.
fn distinct_tensor(rng: &mut StreamRng, shape: Shape4) -> Tensor {
    let mut data: Vec<f64> = (0..shape.volume()).map(|k| k as f64).collect();
    rng.shuffle(&mut data);
    Tensor::from_vec(shape, data).unwrap()
}

fn random_case(rng: &mut StreamRng, i: usize) -> (Tensor, ShuffleConfig) {
    let shape = Shape4::new(
        1 + rng.below(3) as usize,
        1 + rng.below(8) as usize,
        1 + rng.below(13) as usize,
        1 + rng.below(17) as usize,
    );
    let x = distinct_tensor(rng, shape);
    let mode = if i % 2 == 0 {
        ShuffleMode::FullShuffle
    } else {
        ShuffleMode::RowColShuffle
    };
    let scope = if i % 4 < 2 {
        ShuffleScope::PerImageShared
    } else {
        ShuffleScope::PerChannelIndependent
    };
    let cfg = ShuffleConfig::new(1.0, 1 + rng.below(5) as usize, 1 + rng.below(5) as usize)
        .with_mode(mode)
        .with_scope(scope);
    (x, cfg)
}

#[test]
fn acceptance_1_permutation_invariance() {
    let t0 = Instant::now();
    let mut rng = StreamRng::seeded(0xACC1);
    for i in 0..1000 {
        let (x, cfg) = random_case(&mut rng, i);
        let (y, _) = shuffle_forward(&x, &cfg, &mut rng).unwrap();
        let s = x.shape();
        let grid = partition_grid(s.height, s.width, cfg.patch_h, cfg.patch_w);
        for b in 0..s.batch {
            for c in 0..s.channels {
                let before = x.plane(b, c);
                let after = y.plane(b, c);
                for p in grid.patches() {
                    let collect = |plane: &[f64]| {
                        let mut v: Vec<f64> = (p.row0..p.row0 + p.height)
                            .flat_map(|r| {
                                (p.col0..p.col0 + p.width).map(move |cc| plane[r * s.width + cc])
                            })
                            .collect();
                        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        v
                    };
                    assert_eq!(
                        collect(before),
                        collect(after),
                        "acceptance 1 (permutation invariance): FAIL: case {i} leaked values across a patch"
                    );
                }
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        dt < 10.0,
        "acceptance 1 (permutation invariance): FAIL: took {dt:.1}s, budget 10s"
    );
    pass(
        1,
        "permutation invariance",
        format!("1000 random tensors at epsilon=1, per-patch multisets intact, {dt:.2}s"),
    );
}

#[test]
fn acceptance_2_gating_identity() {
    let mut rng = StreamRng::seeded(0xACC2);
    for i in 0..1000 {
        let (x, mut cfg) = random_case(&mut rng, i);
        cfg.epsilon = 0.0;
        let (y, rec) = shuffle_forward(&x, &cfg, &mut rng).unwrap();
        assert_eq!(
            x.data(),
            y.data(),
            "acceptance 2 (gating identity): FAIL: epsilon=0 changed bits in case {i}"
        );
        assert!(rec.is_identity(), "acceptance 2 (gating identity): FAIL: non-identity record");
    }

    let base = ModelSpec::lenet_micro();
    let ps = base
        .with_patchshuffle(&[true, true, true], ShuffleConfig::new(0.7, 2, 2))
        .unwrap();
    let params = Parameters::init(&base, &mut StreamRng::stream(5, 0)).unwrap();
    let mut data_rng = StreamRng::seeded(0xACC2 + 1);
    for i in 0..20 {
        let shape = Shape4::new(3, 1, 10, 10);
        let data: Vec<f64> = (0..shape.volume()).map(|_| data_rng.next_f64()).collect();
        let x = Tensor::from_vec(shape, data).unwrap();
        let a = forward(&base, &params, &x, None, ShuffleDraws::Eval).unwrap();
        let b = forward(&ps, &params, &x, None, ShuffleDraws::Eval).unwrap();
        assert_eq!(
            a.scores.data(),
            b.scores.data(),
            "acceptance 2 (gating identity): FAIL: inference output differs at input {i}"
        );
    }
    pass(
        2,
        "gating identity",
        "epsilon=0 transform and inference-mode network both bit-identical".into(),
    );
}

#[test]
fn acceptance_3_exact_adjoint() {
    let mut rng = StreamRng::seeded(0xACC3);
    for i in 0..1000 {
        let (x, cfg) = random_case(&mut rng, i);
        let (_, rec) = shuffle_forward(&x, &cfg, &mut rng).unwrap();
        let replayed = shuffle_apply_recorded(&x, &rec).unwrap();
        let back = shuffle_backward(&replayed, &rec).unwrap();
        assert_eq!(
            back.data(),
            x.data(),
            "acceptance 3 (exact adjoint): FAIL: backward(apply(x)) != x in case {i}"
        );
    }
    pass(
        3,
        "exact adjoint",
        "backward . apply is the identity, bit-exact, on 1000 random records".into(),
    );
}

#[test]
fn acceptance_4_gradient_check() {
    let t0 = Instant::now();
    let cfg = ShuffleConfig::new(1.0, 2, 2).with_scope(ShuffleScope::PerChannelIndependent);
    let outcome = gradcheck_op("lenet_micro", Some("011"), cfg, 11).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        outcome.params <= 2000,
        "acceptance 4 (gradient check): FAIL: model too large ({} params)",
        outcome.params
    );
    assert!(
        outcome.max_rel_error < 1e-6,
        "acceptance 4 (gradient check): FAIL: max rel error {} at {}",
        outcome.max_rel_error,
        outcome.worst
    );
    assert!(dt < 120.0, "acceptance 4 (gradient check): FAIL: took {dt:.1}s, budget 120s");
    pass(
        4,
        "gradient check",
        format!(
            "{} params + inputs, shuffle after each conv, max rel {:.2e} ({:.1}s)",
            outcome.params, outcome.max_rel_error, dt
        ),
    );
}

#[test]
fn acceptance_5_uniformity() {
    let mut rng = StreamRng::seeded(0xACC5);
    let n = 120_000usize;
    let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
    for _ in 0..n {
        *counts
            .entry(sample_patch_permutation(&mut rng, 2, 2, ShuffleMode::FullShuffle))
            .or_default() += 1;
    }
    assert_eq!(
        counts.len(),
        24,
        "acceptance 5 (uniformity): FAIL: {} of 24 arrangements seen",
        counts.len()
    );
    let p = 1.0 / 24.0;
    let expected = n as f64 * p;
    let se = (n as f64 * p * (1.0 - p)).sqrt();
    for (perm, count) in &counts {
        let dev = (*count as f64 - expected).abs();
        assert!(
            dev <= 5.0 * se,
            "acceptance 5 (uniformity): FAIL: {perm:?} seen {count} times, {:.1} SE away",
            dev / se
        );
    }

    let mut rowcol: HashMap<Vec<u32>, usize> = HashMap::new();
    for _ in 0..10_000 {
        *rowcol
            .entry(sample_patch_permutation(&mut rng, 2, 2, ShuffleMode::RowColShuffle))
            .or_default() += 1;
    }
    assert_eq!(
        rowcol.len(),
        4,
        "acceptance 5 (uniformity): FAIL: rowcol 2x2 produced {} outcomes, expected 4",
        rowcol.len()
    );
    let max_dev = counts
        .values()
        .map(|&c| (c as f64 - expected).abs() / se)
        .fold(0.0, f64::max);
    pass(
        5,
        "uniformity",
        format!("all 24 full-shuffle arrangements within {max_dev:.2} SE; rowcol hits exactly 4"),
    );
}

#[test]
fn acceptance_6_gated_objective_identity() {
    let model = ModelSpec::lenet_micro();
    let params = Parameters::init(&model, &mut StreamRng::stream(3, 0)).unwrap();
    let shape = Shape4::new(4, 1, 10, 10);
    let mut data_rng = StreamRng::seeded(0xACC6);
    let data: Vec<f64> = (0..shape.volume()).map(|_| data_rng.next_f64()).collect();
    let x = Tensor::from_vec(shape, data).unwrap();
    let labels = [0u8, 3, 7, 9];

    let cfg = ShuffleConfig::new(0.05, 2, 2);
    let (_, rec) = shuffle_forward(&x, &ShuffleConfig::new(1.0, 2, 2), &mut data_rng).unwrap();

    let plain = forward(&model, &params, &x, Some(&labels), ShuffleDraws::Eval)
        .unwrap()
        .loss
        .unwrap()
        .loss;
    let transformed_x = shuffle_apply_recorded(&x, &rec).unwrap();
    let transformed = forward(&model, &params, &transformed_x, Some(&labels), ShuffleDraws::Eval)
        .unwrap()
        .loss
        .unwrap()
        .loss;

    let n = 10_000usize;
    let mut gate_rng = StreamRng::seeded(0xACC6 + 1);
    let mut sum = 0.0;
    for _ in 0..n {
        let (lv, _) = loss_gated(&model, &params, &x, &labels, &cfg, &mut gate_rng, Some(&rec))
            .unwrap();
        sum += lv.loss;
    }
    let observed = sum / n as f64;
    let expected = (1.0 - cfg.epsilon) * plain + cfg.epsilon * transformed;
    let se = (plain - transformed).abs() * (cfg.epsilon * (1.0 - cfg.epsilon) / n as f64).sqrt();
    assert!(
        se > 0.0,
        "acceptance 6 (gated objective): FAIL: degenerate case, losses identical"
    );
    let dev = (observed - expected).abs() / se;
    assert!(
        dev <= 3.0,
        "acceptance 6 (gated objective): FAIL: mean {observed} vs expected {expected} is {dev:.2} SE away"
    );
    pass(
        6,
        "gated objective",
        format!("10000 draws at epsilon=0.05, mean within {dev:.2} SE of the mixture"),
    );
}

#[test]
fn acceptance_7_pollution_statistics() {
    let (images, _) = synthetic_pair(100, 1, 77);
    let data = images.images().data();
    let total = data.len() as f64;
    let n_extreme = data.iter().filter(|&&v| v == 0.0 || v == 1.0).count() as f64;
    let n_mid = total - n_extreme;

    let mut details = Vec::new();
    for (k, &tau) in [0.1, 0.3, 0.5].iter().enumerate() {
        let mut rng = StreamRng::stream(0xACC7, k as u64);
        let noisy = salt_pepper(&images, tau, &mut rng);
        let altered = data
            .iter()
            .zip(noisy.images().data())
            .filter(|(a, b)| a != b)
            .count() as f64;
        let expected = tau * n_mid + (tau / 2.0) * n_extreme;
        let se = (n_mid * tau * (1.0 - tau) + n_extreme * (tau / 2.0) * (1.0 - tau / 2.0)).sqrt();
        let dev = (altered - expected).abs() / se;
        assert!(
            dev <= 5.0,
            "acceptance 7 (pollution statistics): FAIL: salt-pepper tau={tau}: {altered} altered vs {expected:.1} expected, {dev:.2} SE"
        );
        details.push(format!("sp({tau})={dev:.2}SE"));
    }

    let tau2 = 0.1;
    let side = images.image_shape().height;
    let mut rng = StreamRng::stream(0xACC7, 9);
    let occluded = occlude(&images, tau2, 3, &mut rng);
    let altered = data
        .iter()
        .zip(occluded.images().data())
        .filter(|(a, b)| a != b)
        .count() as f64;
    // A pixel changes iff it is nonzero and at least one of its in-bounds
    // 3x3 neighbors fires as a center.
    let mut expected = 0.0;
    let mut var = 0.0;
    for (idx, &v) in data.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let i = (idx / side) % side;
        let j = idx % side;
        let span = |k: usize| if k == 0 || k == side - 1 { 2 } else { 3 };
        let p = 1.0 - (1.0 - tau2).powi((span(i) * span(j)) as i32);
        expected += p;
        var += p * (1.0 - p);
    }
    let se = var.sqrt();
    let dev = (altered - expected).abs() / se;
    assert!(
        dev <= 5.0,
        "acceptance 7 (pollution statistics): FAIL: occlusion: {altered} altered vs {expected:.1} expected, {dev:.2} SE"
    );
    pass(
        7,
        "pollution statistics",
        format!("{}; occlude(0.1)={dev:.2}SE over 100 images", details.join(", ")),
    );
}

#[test]
fn acceptance_8_desk_scale_directional() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let mut clean = ExperimentConfig::default();
    clean.out_dir = dir.path().join("clean");
    let clean_report = run(&clean).unwrap();
    assert!(
        !clean_report.any_failed,
        "acceptance 8 (desk-scale directional): FAIL: a clean arm failed"
    );
    let (cb, cp) = (
        clean_report.baseline.mean_final_error,
        clean_report.patchshuffle.mean_final_error,
    );
    assert!(
        cp <= cb + 0.003,
        "acceptance 8 (desk-scale directional): FAIL: clean: patchshuffle {cp:.4} exceeds baseline {cb:.4} + 0.3pp"
    );

    let mut polluted = ExperimentConfig::default();
    polluted.pollution = Some(PollutionSpec {
        kind: PollutionKind::SaltPepper { tau1: 0.3 },
        target: PollutionTarget::TrainAndTest,
    });
    polluted.out_dir = dir.path().join("polluted");
    let polluted_report = run(&polluted).unwrap();
    assert!(
        !polluted_report.any_failed,
        "acceptance 8 (desk-scale directional): FAIL: a polluted arm failed"
    );
    let (pb, pp) = (
        polluted_report.baseline.mean_final_error,
        polluted_report.patchshuffle.mean_final_error,
    );
    assert!(
        pp < pb,
        "acceptance 8 (desk-scale directional): FAIL: polluted: patchshuffle {pp:.4} not below baseline {pb:.4}"
    );

    let dt = t0.elapsed().as_secs_f64();
    assert!(
        dt < 1800.0,
        "acceptance 8 (desk-scale directional): FAIL: took {dt:.0}s, budget 1800s"
    );
    pass(
        8,
        "desk-scale directional",
        format!(
            "clean {cp:.4} vs {cb:.4} (non-inferior); salt-pepper 0.3 {pp:.4} < {pb:.4}; {dt:.0}s"
        ),
    );
}

#[test]
fn acceptance_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 1;
    cfg.train.seeds = vec![4];
    cfg.train.batch_size = 16;
    cfg.data = DataSource::Synthetic {
        train: 48,
        test: 32,
        seed: 7,
    };
    cfg.eval_batch = 32;
    cfg.out_dir = dir.path().to_path_buf();

    let (mut a, mut b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
    a.wall_seconds = 0.0;
    b.wall_seconds = 0.0;
    assert_eq!(a, b, "acceptance 9 (determinism): FAIL: run reports differ");

    let (mut sa, mut sb) = (
        sweep(&cfg, &[0.5], &[(2, 2)]).unwrap(),
        sweep(&cfg, &[0.5], &[(2, 2)]).unwrap(),
    );
    sa.wall_seconds = 0.0;
    sb.wall_seconds = 0.0;
    assert_eq!(sa, sb, "acceptance 9 (determinism): FAIL: sweep reports differ");

    let ga = gradcheck_op("lenet_micro", Some("100"), ShuffleConfig::new(1.0, 2, 2), 2).unwrap();
    let gb = gradcheck_op("lenet_micro", Some("100"), ShuffleConfig::new(1.0, 2, 2), 2).unwrap();
    assert_eq!(
        serde_json::to_string(&ga).unwrap(),
        serde_json::to_string(&gb).unwrap(),
        "acceptance 9 (determinism): FAIL: gradcheck outcomes differ"
    );
    pass(
        9,
        "determinism",
        "run, sweep and gradcheck byte-identical across repeats (timing aside)".into(),
    );
}
