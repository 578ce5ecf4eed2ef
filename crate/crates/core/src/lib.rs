//! PatchShuffle regularization on a small CPU CNN stack.
//!
//! The crate is organized around five pieces:
//!
//! - [`tensor`]: dense rank-4 arrays (batch, channel, row, column) in f64.
//! - [`rng`]: seeded random number generation with independent streams.
//! - [`shuffle`]: the PatchShuffle transform: non-overlapping patch
//!   partition, per-patch permutation sampling, forward application with a
//!   recorded mapping, and exact gradient routing back through that mapping.
//! - [`nn`]: a minimal trainable CNN (conv / max-pool / ReLU / fully
//!   connected / softmax cross-entropy) that hosts shuffle layers, plus SGD
//!   with momentum and finite-difference gradient checking.
//! - [`data`]: IDX-format ingestion, preprocessing, mini-batching, and the
//!   salt-and-pepper / occlusion pollution generators.

pub mod data;
pub mod nn;
pub mod rng;
pub mod shuffle;
pub mod tensor;
