//! Central finite-difference verification of the analytic gradients.
//!
//! PatchShuffle randomness must be frozen before checking: the caller runs
//! one training forward pass, keeps its records, and both the analytic and
//! the numeric side replay exactly those permutations, so the compared
//! function is deterministic and piecewise smooth.

use super::{backward, forward, Gradients, ModelSpec, NnError, Parameters, ShuffleDraws, ShuffleRecords};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-6;

/// Guard for near-zero gradient pairs: below this scale, absolute instead of
/// relative comparison (finite differences bottom out around 1e-11 here).
const DENOM_FLOOR: f64 = 1e-2;

/// |a - n| / max(|a| + |n|, floor).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which element was worst, e.g. "layer 1 weight[34]" or "input[7]".
    pub worst: String,
    pub step: f64,
    pub threshold: f64,
    pub checks: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Compares `analytic` against central finite differences of the replayed
/// loss for every weight, bias, and input element. `params` is perturbed in
/// place and restored.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    model: &ModelSpec,
    params: &mut Parameters,
    x: &Tensor,
    labels: &[u8],
    records: &ShuffleRecords,
    analytic: &Gradients,
    step: f64,
    threshold: f64,
) -> Result<GradCheckReport, NnError> {
    assert!(step > 0.0 && step.is_finite());
    let loss_of = |params: &Parameters, x: &Tensor| -> Result<f64, NnError> {
        let pass = forward(model, params, x, Some(labels), ShuffleDraws::Replay(records))?;
        Ok(pass.loss.expect("labels were supplied").loss)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        step,
        threshold,
        checks: 0,
    };
    let note = |rel: f64, place: String, report: &mut GradCheckReport| {
        report.checks += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = place;
        }
    };

    fn tensor_of(params: &mut Parameters, li: usize, weight_side: bool) -> &mut Tensor {
        let pair = &mut params.layers[li];
        if weight_side {
            &mut pair.weight
        } else {
            &mut pair.bias
        }
    }

    for li in 0..params.layers.len() {
        for weight_side in [true, false] {
            let volume = tensor_of(params, li, weight_side).shape().volume();
            for k in 0..volume {
                let orig = tensor_of(params, li, weight_side).data()[k];
                tensor_of(params, li, weight_side).data_mut()[k] = orig + step;
                let up = loss_of(params, x)?;
                tensor_of(params, li, weight_side).data_mut()[k] = orig - step;
                let down = loss_of(params, x)?;
                tensor_of(params, li, weight_side).data_mut()[k] = orig;

                let numeric = (up - down) / (2.0 * step);
                let pair = &analytic.layers[li];
                let a = if weight_side { &pair.weight } else { &pair.bias }.data()[k];
                let side = if weight_side { "weight" } else { "bias" };
                note(
                    relative_error(a, numeric),
                    format!("layer {li} {side}[{k}]"),
                    &mut report,
                );
            }
        }
    }

    let mut xp = x.clone();
    for k in 0..x.shape().volume() {
        let orig = xp.data()[k];
        xp.data_mut()[k] = orig + step;
        let up = loss_of(params, &xp)?;
        xp.data_mut()[k] = orig - step;
        let down = loss_of(params, &xp)?;
        xp.data_mut()[k] = orig;

        let numeric = (up - down) / (2.0 * step);
        note(
            relative_error(analytic.input.data()[k], numeric),
            format!("input[{k}]"),
            &mut report,
        );
    }

    Ok(report)
}

/// One-call form: initializes parameters from `seed`, runs a training
/// forward pass (fresh draws, records kept), computes analytic gradients,
/// and checks them with the default step and threshold.
pub fn check_model(
    model: &ModelSpec,
    x: &Tensor,
    labels: &[u8],
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut init_rng = crate::rng::StreamRng::stream(seed, 0);
    let mut params = Parameters::init(model, &mut init_rng)?;
    let mut draw_rng = crate::rng::StreamRng::stream(seed, 2);
    let pass = forward(model, &params, x, Some(labels), ShuffleDraws::Fresh(&mut draw_rng))?;
    let records = pass.records.clone();
    let analytic = backward(model, &params, &pass)?;
    check_gradients(
        model,
        &mut params,
        x,
        labels,
        &records,
        &analytic,
        DEFAULT_STEP,
        DEFAULT_THRESHOLD,
    )
}
