//! Experiment harness around `patchshuffle-core`: configuration, a synthetic
//! digit corpus for machines without the real data, paired-arm training,
//! and report emission. The `patchshuffle` binary is a thin CLI over this.

pub mod config;
pub mod report;
pub mod run;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid json")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Data(#[from] patchshuffle_core::data::DataError),
    #[error(transparent)]
    Nn(#[from] patchshuffle_core::nn::NnError),
    #[error(transparent)]
    Shuffle(#[from] patchshuffle_core::shuffle::ShuffleError),
}
