//! One training arm: seeded streams, SGD epochs, per-epoch metrics.

use patchshuffle_core::data::{minibatches, Dataset};
use patchshuffle_core::nn::{
    backward, evaluate, forward, sgd_step, ModelSpec, Parameters, ShuffleDraws,
};
use patchshuffle_core::rng::StreamRng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;

/// Stream ids hung off each training seed. Paired arms share weight init
/// (stream 0) and data order (stream 1); shuffle draws live on their own
/// stream so enabling PatchShuffle cannot perturb either.
pub const STREAM_WEIGHTS: u64 = 0;
pub const STREAM_DATA_ORDER: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
/// Pollution is drawn once per experiment from the first seed, so every arm
/// and every seed trains on the same polluted data.
pub const STREAM_POLLUTION: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    /// Mean cross-entropy per epoch, weighted by batch size.
    pub train_loss: Vec<f64>,
    /// Fraction of the test split misclassified, per epoch.
    pub test_error: Vec<f64>,
    pub final_error: f64,
    /// Error text if the arm aborted (non-finite update etc.). A failed arm
    /// reports final_error = 1.0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

impl ArmRecord {
    pub fn ok(&self) -> bool {
        self.failed.is_none()
    }
}

pub fn train_arm(
    model: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    tc: &TrainConfig,
    seed: u64,
    eval_batch: usize,
) -> ArmRecord {
    let mut rec = ArmRecord {
        train_loss: Vec::new(),
        test_error: Vec::new(),
        final_error: 1.0,
        failed: None,
    };
    match run_epochs(model, train, test, tc, seed, eval_batch, &mut rec) {
        Ok(()) => {
            rec.final_error = *rec.test_error.last().expect("epochs >= 1");
        }
        Err(msg) => {
            rec.failed = Some(msg);
            rec.final_error = 1.0;
        }
    }
    rec
}

fn run_epochs(
    model: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    tc: &TrainConfig,
    seed: u64,
    eval_batch: usize,
    rec: &mut ArmRecord,
) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let mut init_rng = StreamRng::stream(seed, STREAM_WEIGHTS);
    let mut params = Parameters::init(model, &mut init_rng).map_err(|e| err(&e))?;
    let mut order_rng = StreamRng::stream(seed, STREAM_DATA_ORDER);
    let mut shuffle_rng = StreamRng::stream(seed, STREAM_SHUFFLE);
    for _ in 0..tc.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (x, labels) in minibatches(train, tc.batch_size, &mut order_rng).map_err(|e| err(&e))? {
            let pass = forward(
                model,
                &params,
                &x,
                Some(&labels),
                ShuffleDraws::Fresh(&mut shuffle_rng),
            )
            .map_err(|e| err(&e))?;
            let grads = backward(model, &params, &pass).map_err(|e| err(&e))?;
            sgd_step(&mut params, &grads, tc.lr, tc.momentum, tc.weight_decay)
                .map_err(|e| err(&e))?;
            let loss = pass.loss.as_ref().expect("labels were supplied").loss;
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
        }
        rec.train_loss.push(loss_sum / seen as f64);
        rec.test_error
            .push(evaluate(model, &params, test, eval_batch).map_err(|e| err(&e))?);
    }
    Ok(())
}
