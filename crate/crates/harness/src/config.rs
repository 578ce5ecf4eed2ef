//! Experiment configuration: a JSON file with defaults for every field,
//! plus the handful of CLI overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use patchshuffle_core::data::PollutionSpec;
use patchshuffle_core::nn::ModelSpec;
use patchshuffle_core::shuffle::{ShuffleConfig, ShuffleMode};

use crate::HarnessError;

/// Optimizer and schedule settings, shared by every arm of an experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
}

fn d_lr() -> f64 {
    0.01
}
fn d_momentum() -> f64 {
    0.9
}
fn d_weight_decay() -> f64 {
    5e-4
}
fn d_batch_size() -> usize {
    64
}
fn d_epochs() -> usize {
    5
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: d_lr(),
            momentum: d_momentum(),
            weight_decay: d_weight_decay(),
            batch_size: d_batch_size(),
            epochs: d_epochs(),
            seeds: d_seeds(),
        }
    }
}

/// Either the name of a built-in architecture or a full inline spec.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Builtin(String),
    Inline(ModelSpec),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<ModelSpec, HarnessError> {
        match self {
            ModelRef::Builtin(name) => builtin_model(name),
            ModelRef::Inline(spec) => Ok(spec.clone()),
        }
    }
}

pub fn builtin_model(name: &str) -> Result<ModelSpec, HarnessError> {
    match name {
        "lenet" => Ok(ModelSpec::lenet()),
        "lenet_micro" => Ok(ModelSpec::lenet_micro()),
        other => Err(HarnessError::Config(format!(
            "unknown model '{other}' (built-ins: lenet, lenet_micro)"
        ))),
    }
}

/// Where the train/test splits come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Four IDX files on disk (the standard ubyte layout).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Generated digit corpus; see the `synth` module.
    Synthetic { train: usize, test: usize, seed: u64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "d_model")]
    pub model: ModelRef,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_shuffle")]
    pub shuffle: ShuffleConfig,
    /// One char per insertion point: position 0 is the network input, then
    /// one position after each conv layer. '1' puts a shuffle layer there.
    #[serde(default = "d_layer_mask")]
    pub layer_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pollution: Option<PollutionSpec>,
    #[serde(default = "d_data")]
    pub data: DataSource,
    /// Optional prefix cut of the train split, applied before pollution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    #[serde(default = "d_eval_batch")]
    pub eval_batch: usize,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
}

fn d_model() -> ModelRef {
    ModelRef::Builtin("lenet".into())
}
fn d_shuffle() -> ShuffleConfig {
    ShuffleConfig::new(0.05, 2, 2)
}
fn d_layer_mask() -> String {
    "100".into()
}
fn d_data() -> DataSource {
    DataSource::Synthetic {
        train: 5000,
        test: 10000,
        seed: 7,
    }
}
fn d_eval_batch() -> usize {
    256
}
fn d_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// CLI-level overrides; `None` leaves the config value alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub patch: Option<(usize, usize)>,
    pub mode: Option<ShuffleMode>,
    pub layers: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Config file if given, defaults otherwise, then CLI overrides on top.
    pub fn from_cli(path: Option<&Path>, overrides: &Overrides) -> Result<Self, HarnessError> {
        let mut cfg = match path {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(overrides);
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(e) = o.epsilon {
            self.shuffle.epsilon = e;
        }
        if let Some((h, w)) = o.patch {
            self.shuffle.patch_h = h;
            self.shuffle.patch_w = w;
        }
        if let Some(m) = o.mode {
            self.shuffle.mode = m;
        }
        if let Some(mask) = &o.layers {
            self.layer_mask = mask.clone();
        }
        if let Some(s) = o.seed {
            self.train.seeds = vec![s];
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.shuffle.validate()?;
        if let Some(p) = &self.pollution {
            p.validate()?;
        }
        if self.train.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 || self.eval_batch == 0 {
            return Err(HarnessError::Config(
                "batch_size, epochs and eval_batch must all be >= 1".into(),
            ));
        }
        if let DataSource::Synthetic { train, test, .. } = self.data {
            if train == 0 || test == 0 {
                return Err(HarnessError::Config(
                    "synthetic train and test counts must be >= 1".into(),
                ));
            }
        }
        self.ps_model()?;
        Ok(())
    }

    /// The architecture with no shuffle layers (control arm).
    pub fn base_model(&self) -> Result<ModelSpec, HarnessError> {
        Ok(self.model.resolve()?.without_patchshuffle())
    }

    /// The same architecture with shuffle layers at the masked positions.
    pub fn ps_model(&self) -> Result<ModelSpec, HarnessError> {
        let mask = parse_mask(&self.layer_mask)?;
        Ok(self.base_model()?.with_patchshuffle(&mask, self.shuffle)?)
    }
}

pub fn parse_mask(s: &str) -> Result<Vec<bool>, HarnessError> {
    if s.is_empty() {
        return Err(HarnessError::Config("layer mask is empty".into()));
    }
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(HarnessError::Config(format!(
                "layer mask may only contain 0 and 1, found '{other}'"
            ))),
        })
        .collect()
}

/// "2" means 2x2; "2x3" means 2 rows by 3 columns.
pub fn parse_patch(s: &str) -> Result<(usize, usize), HarnessError> {
    let bad = || HarnessError::Config(format!("bad patch size '{s}' (expected K or HxW)"));
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    match parts.as_slice() {
        [k] => {
            let k = num(k)?;
            Ok((k, k))
        }
        [h, w] => Ok((num(h)?, num(w)?)),
        _ => Err(bad()),
    }
}

pub fn parse_mode(s: &str) -> Result<ShuffleMode, HarnessError> {
    match s {
        "full" => Ok(ShuffleMode::FullShuffle),
        "rowcol" => Ok(ShuffleMode::RowColShuffle),
        other => Err(HarnessError::Config(format!(
            "unknown mode '{other}' (expected full or rowcol)"
        ))),
    }
}
