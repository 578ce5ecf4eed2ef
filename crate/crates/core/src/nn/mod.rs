//! Minimal trainable CNN stack hosting PatchShuffle layers.
//!
//! A model is an ordered list of layers ending in softmax cross-entropy.
//! PatchShuffle appears as an ordinary layer: active during training
//! (`ShuffleDraws::Fresh` samples new permutations, `ShuffleDraws::Replay`
//! re-applies recorded ones) and skipped entirely at inference
//! (`ShuffleDraws::Eval`), so evaluation never depends on shuffle
//! configuration or rng state.
//!
//! The loss is mean cross-entropy over the mini-batch. The SGD update is
//! `v <- momentum*v + g + weight_decay*w; w <- w - lr*v`, applied to weights
//! and biases alike.

mod checkpoint;
mod gemm;
pub mod gradcheck;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::rng::StreamRng;
use crate::shuffle::{
    shuffle_apply_recorded, shuffle_backward, shuffle_forward, PermutationRecord, ShuffleConfig,
    ShuffleError,
};
use crate::tensor::{Shape4, Tensor, TensorError};

use layers::ConvSpec;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {index}: {detail}")]
    ShapeChain { index: usize, detail: String },
    #[error("input shape {found:?} does not match model input {expected:?}")]
    InputMismatch { expected: Shape4, found: Shape4 },
    #[error("{found} labels for a batch of {batch}")]
    LabelCount { batch: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: u8, classes: usize },
    #[error("parameters do not match the model: {0}")]
    ParamMismatch(String),
    #[error("backward requires a forward pass evaluated with labels")]
    NoLoss,
    #[error("cache does not match the model at layer {index}")]
    CacheMismatch { index: usize },
    #[error("replay records do not match the model ({found} entries for {layers} layers)")]
    RecordMismatch { layers: usize, found: usize },
    #[error("non-finite values in parameter update {index}")]
    NonFiniteUpdate { index: usize },
    #[error("invalid hyper-parameter: {0}")]
    InvalidHyper(String),
    #[error("model JSON: {0}")]
    BadJson(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        k: usize,
        stride: usize,
    },
    Relu,
    FullyConnected {
        out_features: usize,
    },
    SoftmaxCrossEntropy,
    PatchShuffle(ShuffleConfig),
}

fn conv_spec(layer: &LayerSpec) -> ConvSpec {
    match *layer {
        LayerSpec::Conv {
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
        } => ConvSpec {
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
        },
        _ => unreachable!("conv_spec on a non-conv layer"),
    }
}

/// Ordered layer list plus the per-sample input shape (batch field is
/// canonical 1; any batch size is accepted at run time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Shape4,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Output shape after every layer for a given batch size; validates the
    /// whole chain (positive extents, flattening, softmax exactly once and
    /// last, at most 255 classes).
    pub fn shape_chain(&self, batch: usize) -> Result<Vec<Shape4>, NnError> {
        let err = |index: usize, detail: String| Err(NnError::ShapeChain { index, detail });
        if self.layers.is_empty() {
            return err(0, "model has no layers".into());
        }
        let mut cur = Shape4::new(
            batch,
            self.input.channels,
            self.input.height,
            self.input.width,
        );
        let mut chain = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            match layer {
                LayerSpec::Conv { .. } => {
                    let spec = conv_spec(layer);
                    match spec.output_shape(cur) {
                        Some(s) => cur = s,
                        None => {
                            return err(
                                i,
                                format!("conv produces no output for input {cur:?}"),
                            )
                        }
                    }
                }
                LayerSpec::MaxPool { k, stride } => {
                    match layers::pool_output_shape(cur, *k, *stride) {
                        Some(s) => cur = s,
                        None => {
                            return err(
                                i,
                                format!("pool {k}x{k}/{stride} does not fit input {cur:?}"),
                            )
                        }
                    }
                }
                LayerSpec::Relu => {}
                LayerSpec::FullyConnected { out_features } => {
                    if *out_features == 0 {
                        return err(i, "fully connected layer with 0 outputs".into());
                    }
                    cur = Shape4::new(batch, *out_features, 1, 1);
                }
                LayerSpec::PatchShuffle(cfg) => {
                    if let Err(e) = cfg.validate() {
                        return err(i, e.to_string());
                    }
                }
                LayerSpec::SoftmaxCrossEntropy => {
                    if !last {
                        return err(i, "softmax cross-entropy must be the final layer".into());
                    }
                    let classes = cur.channels * cur.plane();
                    if classes < 2 || classes > 255 {
                        return err(i, format!("{classes} classes unsupported"));
                    }
                }
            }
            chain.push(cur);
        }
        if self.layers.last() != Some(&LayerSpec::SoftmaxCrossEntropy) {
            return err(
                self.layers.len() - 1,
                "model must end in softmax cross-entropy".into(),
            );
        }
        Ok(chain)
    }

    /// Class count of the score vector feeding the loss.
    pub fn num_classes(&self) -> Result<usize, NnError> {
        let chain = self.shape_chain(1)?;
        let scores = chain[chain.len() - 2];
        Ok(scores.channels * scores.plane())
    }

    /// (weight, bias) shapes for every learnable layer in model order.
    pub fn param_shapes(&self) -> Result<Vec<(Shape4, Shape4)>, NnError> {
        let chain = self.shape_chain(1)?;
        let mut shapes = Vec::new();
        let mut prev = Shape4::new(
            1,
            self.input.channels,
            self.input.height,
            self.input.width,
        );
        for (layer, &out) in self.layers.iter().zip(&chain) {
            match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => shapes.push((
                    Shape4::new(*out_channels, prev.channels, *kernel_h, *kernel_w),
                    Shape4::new(1, *out_channels, 1, 1),
                )),
                LayerSpec::FullyConnected { out_features } => shapes.push((
                    Shape4::new(*out_features, prev.channels * prev.plane(), 1, 1),
                    Shape4::new(1, *out_features, 1, 1),
                )),
                _ => {}
            }
            prev = out;
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(w, b)| w.volume() + b.volume())
            .sum())
    }

    /// The same model with every PatchShuffle layer removed.
    pub fn without_patchshuffle(&self) -> ModelSpec {
        ModelSpec {
            input: self.input,
            layers: self
                .layers
                .iter()
                .filter(|l| !matches!(l, LayerSpec::PatchShuffle(_)))
                .cloned()
                .collect(),
        }
    }

    /// Inserts PatchShuffle layers by position mask: `mask[0]` puts one at
    /// the input, `mask[1 + k]` after the k-th conv layer. The mask length
    /// must be 1 + number of conv layers. The base model must not already
    /// contain PatchShuffle layers.
    pub fn with_patchshuffle(
        &self,
        mask: &[bool],
        cfg: ShuffleConfig,
    ) -> Result<ModelSpec, NnError> {
        if self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::PatchShuffle(_)))
        {
            return Err(NnError::InvalidHyper(
                "model already contains PatchShuffle layers".into(),
            ));
        }
        let convs = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count();
        if mask.len() != convs + 1 {
            return Err(NnError::InvalidHyper(format!(
                "layer mask has {} entries, model wants {} (input + {convs} convs)",
                mask.len(),
                convs + 1
            )));
        }
        let mut out = Vec::with_capacity(self.layers.len() + mask.len());
        if mask[0] {
            out.push(LayerSpec::PatchShuffle(cfg));
        }
        let mut conv_idx = 0;
        for layer in &self.layers {
            let is_conv = matches!(layer, LayerSpec::Conv { .. });
            out.push(layer.clone());
            if is_conv {
                conv_idx += 1;
                if mask[conv_idx] {
                    out.push(LayerSpec::PatchShuffle(cfg));
                }
            }
        }
        let model = ModelSpec {
            input: self.input,
            layers: out,
        };
        model.shape_chain(1)?;
        Ok(model)
    }

    /// LeNet-style MNIST default: conv 5x5x20, pool 2, conv 5x5x50, pool 2,
    /// FC 500, ReLU, FC 10, softmax cross-entropy (431,080 parameters).
    pub fn lenet() -> ModelSpec {
        ModelSpec {
            input: Shape4::new(1, 1, 28, 28),
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 20,
                    kernel_h: 5,
                    kernel_w: 5,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::MaxPool { k: 2, stride: 2 },
                LayerSpec::Conv {
                    out_channels: 50,
                    kernel_h: 5,
                    kernel_w: 5,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::MaxPool { k: 2, stride: 2 },
                LayerSpec::FullyConnected { out_features: 500 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 10 },
                LayerSpec::SoftmaxCrossEntropy,
            ],
        }
    }

    /// Shrunken LeNet for gradient checking: 10x10 input, 650 parameters.
    pub fn lenet_micro() -> ModelSpec {
        ModelSpec {
            input: Shape4::new(1, 1, 10, 10),
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 4,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::MaxPool { k: 2, stride: 2 },
                LayerSpec::Conv {
                    out_channels: 8,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::MaxPool { k: 2, stride: 2 },
                LayerSpec::FullyConnected { out_features: 16 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 10 },
                LayerSpec::SoftmaxCrossEntropy,
            ],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        let model: ModelSpec =
            serde_json::from_str(s).map_err(|e| NnError::BadJson(e.to_string()))?;
        model.shape_chain(1)?;
        Ok(model)
    }
}

/// One learnable layer's tensors (also reused for their gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPair {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All learnable tensors plus SGD momentum buffers, aligned with the model's
/// learnable layers in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub layers: Vec<ParamPair>,
    velocity: Vec<ParamPair>,
}

impl Parameters {
    /// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) elementwise in
    /// row-major order, biases zero, momentum buffers zero. fan_in is
    /// C*kh*kw for conv and the input width for fully connected layers.
    pub fn init(model: &ModelSpec, rng: &mut StreamRng) -> Result<Parameters, NnError> {
        let mut layers = Vec::new();
        for (ws, bs) in model.param_shapes()? {
            let fan_in = (ws.channels * ws.plane()) as f64;
            let bound = 1.0 / fan_in.sqrt();
            let data = (0..ws.volume())
                .map(|_| (2.0 * rng.next_f64() - 1.0) * bound)
                .collect();
            layers.push(ParamPair {
                weight: Tensor::from_vec(ws, data)?,
                bias: Tensor::zeros(bs),
            });
        }
        Ok(Parameters::from_pairs(layers))
    }

    /// Wraps existing weight/bias pairs with zeroed momentum buffers.
    pub fn from_pairs(layers: Vec<ParamPair>) -> Parameters {
        let velocity = layers
            .iter()
            .map(|p| ParamPair {
                weight: Tensor::zeros(p.weight.shape()),
                bias: Tensor::zeros(p.bias.shape()),
            })
            .collect();
        Parameters { layers, velocity }
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .map(|p| p.weight.shape().volume() + p.bias.shape().volume())
            .sum()
    }

    pub fn validate_for(&self, model: &ModelSpec) -> Result<(), NnError> {
        let shapes = model.param_shapes()?;
        if shapes.len() != self.layers.len() {
            return Err(NnError::ParamMismatch(format!(
                "{} learnable layers, model wants {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, ((ws, bs), pair)) in shapes.iter().zip(&self.layers).enumerate() {
            if pair.weight.shape() != *ws || pair.bias.shape() != *bs {
                return Err(NnError::ParamMismatch(format!(
                    "layer {i}: got ({:?}, {:?}), model wants ({ws:?}, {bs:?})",
                    pair.weight.shape(),
                    pair.bias.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Scalar loss with the per-sample distributions behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    /// Mean cross-entropy over the batch; nonnegative.
    pub loss: f64,
    /// Softmax probabilities, shape (B, classes, 1, 1); rows sum to 1.
    pub probs: Tensor,
    /// Argmax class per sample (first maximum on ties).
    pub predicted: Vec<u8>,
}

/// Per-layer PatchShuffle records from one training forward pass; `None`
/// for non-PatchShuffle layers and for planes the switch skipped entirely
/// only when the layer never fired (inactive layer).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ShuffleRecords {
    pub per_layer: Vec<Option<PermutationRecord>>,
}

/// Randomness policy for a forward pass. `Eval` is inference: PatchShuffle
/// layers are skipped. `Fresh` is training with new draws. `Replay` is
/// training with the permutations of a previous pass, for gradient checks
/// and loss replay.
pub enum ShuffleDraws<'a> {
    Eval,
    Fresh(&'a mut StreamRng),
    Replay(&'a ShuffleRecords),
}

enum LayerCache {
    Conv { x: Tensor },
    Pool { x_shape: Shape4, argmax: Vec<u32> },
    Relu { x: Tensor },
    Fc { x: Tensor },
    Shuffle,
    Loss,
}

/// Everything produced by one forward pass: class scores, optional loss
/// (when labels were supplied), shuffle records, and the activation cache
/// that `backward` consumes.
pub struct ForwardPass {
    pub scores: Tensor,
    pub loss: Option<LossValue>,
    pub records: ShuffleRecords,
    caches: Vec<LayerCache>,
    labels: Option<Vec<u8>>,
}

/// Gradients of the mean batch loss w.r.t. every learnable tensor and the
/// network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamPair>,
    pub input: Tensor,
}

pub fn forward(
    model: &ModelSpec,
    params: &Parameters,
    x: &Tensor,
    labels: Option<&[u8]>,
    mut draws: ShuffleDraws,
) -> Result<ForwardPass, NnError> {
    let batch = x.shape().batch;
    model.shape_chain(batch)?;
    params.validate_for(model)?;
    let sx = x.shape();
    if (sx.channels, sx.height, sx.width)
        != (
            model.input.channels,
            model.input.height,
            model.input.width,
        )
    {
        return Err(NnError::InputMismatch {
            expected: model.input,
            found: sx,
        });
    }
    let classes = model.num_classes()?;
    if let Some(labels) = labels {
        if labels.len() != batch {
            return Err(NnError::LabelCount {
                batch,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NnError::LabelRange {
                label: bad,
                classes,
            });
        }
    }
    if let ShuffleDraws::Replay(recs) = &draws {
        if recs.per_layer.len() != model.layers.len() {
            return Err(NnError::RecordMismatch {
                layers: model.layers.len(),
                found: recs.per_layer.len(),
            });
        }
    }

    let n = model.layers.len();
    let mut cur = x.clone();
    let mut caches = Vec::with_capacity(n);
    let mut records = vec![None; n];
    let mut pi = 0;
    let mut scores = None;
    let mut loss = None;

    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { .. } => {
                let spec = conv_spec(layer);
                let pair = &params.layers[pi];
                let y = layers::conv_forward(&cur, &pair.weight, &pair.bias, &spec)?;
                caches.push(LayerCache::Conv { x: cur });
                cur = y;
                pi += 1;
            }
            LayerSpec::MaxPool { k, stride } => {
                let (y, argmax) = layers::maxpool_forward(&cur, *k, *stride);
                caches.push(LayerCache::Pool {
                    x_shape: cur.shape(),
                    argmax,
                });
                cur = y;
            }
            LayerSpec::Relu => {
                let y = layers::relu_forward(&cur);
                caches.push(LayerCache::Relu { x: cur });
                cur = y;
            }
            LayerSpec::FullyConnected { .. } => {
                let pair = &params.layers[pi];
                let y = layers::fc_forward(&cur, &pair.weight, &pair.bias)?;
                caches.push(LayerCache::Fc { x: cur });
                cur = y;
                pi += 1;
            }
            LayerSpec::PatchShuffle(cfg) => {
                match &mut draws {
                    ShuffleDraws::Eval => {}
                    ShuffleDraws::Fresh(rng) => {
                        let (y, rec) = shuffle_forward(&cur, cfg, rng)?;
                        records[i] = Some(rec);
                        cur = y;
                    }
                    ShuffleDraws::Replay(recs) => {
                        if let Some(rec) = &recs.per_layer[i] {
                            cur = shuffle_apply_recorded(&cur, rec)?;
                            records[i] = Some(rec.clone());
                        }
                    }
                }
                caches.push(LayerCache::Shuffle);
            }
            LayerSpec::SoftmaxCrossEntropy => {
                caches.push(LayerCache::Loss);
                if let Some(labels) = labels {
                    loss = Some(softmax_ce(&cur, labels));
                }
                scores = Some(cur.clone());
            }
        }
    }

    Ok(ForwardPass {
        scores: scores.expect("shape chain guarantees a softmax layer"),
        loss,
        records: ShuffleRecords { per_layer: records },
        caches,
        labels: labels.map(<[u8]>::to_vec),
    })
}

/// Mean cross-entropy via log-sum-exp; stays finite for finite scores.
fn softmax_ce(scores: &Tensor, labels: &[u8]) -> LossValue {
    let s = scores.shape();
    let classes = s.channels * s.plane();
    let batch = s.batch;
    let mut probs = vec![0.0; batch * classes];
    let mut predicted = Vec::with_capacity(batch);
    let mut total = 0.0;
    for b in 0..batch {
        let row = &scores.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (k, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            probs[b * classes + k] = e;
            z += e;
        }
        for p in &mut probs[b * classes..(b + 1) * classes] {
            *p /= z;
        }
        let y = labels[b] as usize;
        total += (max + z.ln() - row[y]).max(0.0);
        let arg = row
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(k, _)| k)
            .unwrap();
        // max_by keeps the last of equal keys; recover the first instead
        let first = row.iter().position(|&v| v == row[arg]).unwrap();
        predicted.push(first as u8);
    }
    LossValue {
        loss: total / batch as f64,
        probs: Tensor::from_vec(Shape4::new(batch, classes, 1, 1), probs)
            .expect("softmax of finite scores is finite"),
        predicted,
    }
}

fn softmax_ce_backward(probs: &Tensor, labels: &[u8]) -> Tensor {
    let s = probs.shape();
    let classes = s.channels * s.plane();
    let batch = s.batch as f64;
    let mut g = probs.data().to_vec();
    for v in &mut g {
        *v /= batch;
    }
    for (b, &y) in labels.iter().enumerate() {
        g[b * classes + y as usize] -= 1.0 / batch;
    }
    Tensor::from_vec(s, g).expect("softmax gradient is finite")
}

pub fn backward(
    model: &ModelSpec,
    params: &Parameters,
    pass: &ForwardPass,
) -> Result<Gradients, NnError> {
    let loss = pass.loss.as_ref().ok_or(NnError::NoLoss)?;
    let labels = pass.labels.as_ref().expect("loss implies labels");
    params.validate_for(model)?;
    if pass.caches.len() != model.layers.len()
        || pass.records.per_layer.len() != model.layers.len()
    {
        return Err(NnError::CacheMismatch {
            index: pass.caches.len().min(model.layers.len()),
        });
    }

    let mut g = softmax_ce_backward(&loss.probs, labels);
    let mut glayers: Vec<ParamPair> = params
        .layers
        .iter()
        .map(|p| ParamPair {
            weight: Tensor::zeros(p.weight.shape()),
            bias: Tensor::zeros(p.bias.shape()),
        })
        .collect();
    let mut pi = params.layers.len();

    for (i, layer) in model.layers.iter().enumerate().rev() {
        match (layer, &pass.caches[i]) {
            (LayerSpec::SoftmaxCrossEntropy, LayerCache::Loss) => {
                // g already holds d(loss)/d(scores); reshape to score layout
                let shape = pass.scores.shape();
                g = Tensor::from_vec(shape, g.data().to_vec())?;
            }
            (LayerSpec::Conv { .. }, LayerCache::Conv { x }) => {
                pi -= 1;
                let spec = conv_spec(layer);
                let (gx, gw, gb) =
                    layers::conv_backward(x, &params.layers[pi].weight, &spec, &g)?;
                glayers[pi] = ParamPair {
                    weight: gw,
                    bias: gb,
                };
                g = gx;
            }
            (LayerSpec::MaxPool { .. }, LayerCache::Pool { x_shape, argmax }) => {
                g = layers::maxpool_backward(*x_shape, argmax, &g);
            }
            (LayerSpec::Relu, LayerCache::Relu { x }) => {
                g = layers::relu_backward(x, &g);
            }
            (LayerSpec::FullyConnected { .. }, LayerCache::Fc { x }) => {
                pi -= 1;
                let (gx, gw, gb) = layers::fc_backward(x, &params.layers[pi].weight, &g)?;
                glayers[pi] = ParamPair {
                    weight: gw,
                    bias: gb,
                };
                g = gx;
            }
            (LayerSpec::PatchShuffle(_), LayerCache::Shuffle) => {
                if let Some(rec) = &pass.records.per_layer[i] {
                    g = shuffle_backward(&g, rec)?;
                }
            }
            _ => return Err(NnError::CacheMismatch { index: i }),
        }
    }

    Ok(Gradients {
        layers: glayers,
        input: g,
    })
}

/// The gated objective: one Bernoulli(epsilon) switch decides whether this
/// call evaluates the plain loss or the loss of the transformed input, so
/// the expected value is (1-eps)*l(X) + eps*l(T(X)).
///
/// When the switch fires, `replay` (if given) supplies the transform T;
/// otherwise a fresh one is sampled from `rng` with the switch forced on.
/// The model's own PatchShuffle layers stay inert here: the gate is the
/// input-level form of the objective, and each loss term is the plain
/// network loss. Returns the loss and the transform record (identity when
/// the switch did not fire).
pub fn loss_gated(
    model: &ModelSpec,
    params: &Parameters,
    x: &Tensor,
    labels: &[u8],
    cfg: &ShuffleConfig,
    rng: &mut StreamRng,
    replay: Option<&PermutationRecord>,
) -> Result<(LossValue, PermutationRecord), NnError> {
    cfg.validate()?;
    if !rng.bernoulli(cfg.epsilon) {
        let pass = forward(model, params, x, Some(labels), ShuffleDraws::Eval)?;
        return Ok((
            pass.loss.expect("labels were supplied"),
            PermutationRecord::identity(x.shape()),
        ));
    }
    let (tx, record) = match replay {
        Some(rec) => (shuffle_apply_recorded(x, rec)?, rec.clone()),
        None => {
            let forced = ShuffleConfig {
                epsilon: 1.0,
                ..*cfg
            };
            shuffle_forward(x, &forced, rng)?
        }
    };
    let pass = forward(model, params, &tx, Some(labels), ShuffleDraws::Eval)?;
    Ok((pass.loss.expect("labels were supplied"), record))
}

/// `v <- momentum*v + g + weight_decay*w; w <- w - lr*v` for every weight
/// and bias. The update is all-or-nothing: if any new value would be
/// non-finite, nothing is written and an error is returned.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), NnError> {
    for (name, v) in [("lr", lr), ("momentum", momentum), ("weight_decay", weight_decay)] {
        if !v.is_finite() || v < 0.0 {
            return Err(NnError::InvalidHyper(format!("{name} = {v}")));
        }
    }
    if grads.layers.len() != params.layers.len() {
        return Err(NnError::ParamMismatch(format!(
            "{} gradient layers for {} parameter layers",
            grads.layers.len(),
            params.layers.len()
        )));
    }

    let step_tensor = |w: &mut Tensor, v: &mut Tensor, g: &Tensor| -> bool {
        let mut nv = Vec::with_capacity(w.data().len());
        let mut nw = Vec::with_capacity(w.data().len());
        for ((&wv, &vv), &gv) in w.data().iter().zip(v.data()).zip(g.data()) {
            let vel = momentum * vv + gv + weight_decay * wv;
            nv.push(vel);
            nw.push(wv - lr * vel);
        }
        if nv.iter().chain(&nw).all(|x| x.is_finite()) {
            v.data_mut().copy_from_slice(&nv);
            w.data_mut().copy_from_slice(&nw);
            true
        } else {
            false
        }
    };

    for idx in 0..params.layers.len() {
        let g = &grads.layers[idx];
        let p = &mut params.layers[idx];
        let v = &mut params.velocity[idx];
        if g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() {
            return Err(NnError::ParamMismatch(format!("gradient shapes at layer {idx}")));
        }
        if !step_tensor(&mut p.weight, &mut v.weight, &g.weight)
            || !step_tensor(&mut p.bias, &mut v.bias, &g.bias)
        {
            return Err(NnError::NonFiniteUpdate { index: idx });
        }
    }
    Ok(())
}

/// Argmax class per sample from a (B, classes, 1, 1) score tensor; first
/// maximum wins ties.
pub fn argmax_classes(scores: &Tensor) -> Vec<u8> {
    let s = scores.shape();
    let classes = s.channels * s.plane();
    (0..s.batch)
        .map(|b| {
            let row = &scores.data()[b * classes..(b + 1) * classes];
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Fraction of misclassified samples under argmax, inference mode
/// (PatchShuffle inert); deterministic for fixed parameters.
pub fn evaluate(
    model: &ModelSpec,
    params: &Parameters,
    d: &Dataset,
    batch: usize,
) -> Result<f64, NnError> {
    if batch == 0 {
        return Err(NnError::InvalidHyper("evaluation batch size 0".into()));
    }
    let mut wrong = 0usize;
    let n = d.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let (x, labels) = d.batch_range(start, end);
        let pass = forward(model, params, &x, None, ShuffleDraws::Eval)?;
        wrong += argmax_classes(&pass.scores)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p != l)
            .count();
        start = end;
    }
    Ok(wrong as f64 / n as f64)
}
