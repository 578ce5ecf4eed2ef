//! The PatchShuffle transform.
//!
//! An image or feature map is partitioned into non-overlapping patches
//! (truncated at the right/bottom edges when the patch size does not divide
//! the plane). Per image or per channel, a Bernoulli switch `r` with
//! probability `epsilon` decides whether the plane is shuffled this pass; when
//! it fires, every patch's values are permuted within the patch by a freshly
//! sampled permutation. The full position mapping is recorded so that
//! gradients can be routed back through the exact inverse permutation and so
//! that the same transform can be replayed deterministically.
//!
//! Two permutation modes exist. `FullShuffle` draws uniformly from all `k!`
//! arrangements of a k-element patch (Fisher–Yates); `RowColShuffle` draws a
//! row permutation and a column permutation independently and composes them,
//! reaching `(rows! * cols!)` arrangements, the permutation-matrix
//! pre/post-multiplication form. `FullShuffle` is the default.
//!
//! Draw order is part of the contract: batch index ascending, then (for
//! per-channel scope) channel ascending; within a plane, one Bernoulli draw,
//! then patches in row-major grid order; `RowColShuffle` draws the row
//! permutation before the column permutation. Identical seed, input, and
//! config therefore give bit-identical output and record.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;
use crate::tensor::{Shape4, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum ShuffleError {
    #[error("invalid shuffle config: {0}")]
    InvalidConfig(String),
    #[error("record shape {record:?} does not match tensor shape {tensor:?}")]
    ShapeMismatch { record: Shape4, tensor: Shape4 },
    #[error("corrupt permutation record: {0}")]
    CorruptRecord(String),
}

/// How a patch is permuted when its plane's switch fires.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Uniform over all k! within-patch arrangements.
    #[default]
    FullShuffle,
    /// Independent row and column permutations ((rows! * cols!) arrangements).
    RowColShuffle,
}

/// Granularity of the Bernoulli switch and the sampled permutations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleScope {
    /// One switch and one spatial permutation per image, applied identically
    /// to every channel (no color fringing on input images).
    #[default]
    PerImageShared,
    /// Independent switch and permutations per (image, channel), the
    /// feature-map setting.
    PerChannelIndependent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleConfig {
    /// Shuffle probability in [0, 1].
    pub epsilon: f64,
    pub patch_h: usize,
    pub patch_w: usize,
    #[serde(default)]
    pub mode: ShuffleMode,
    #[serde(default)]
    pub scope: ShuffleScope,
}

impl ShuffleConfig {
    pub fn new(epsilon: f64, patch_h: usize, patch_w: usize) -> Self {
        ShuffleConfig {
            epsilon,
            patch_h,
            patch_w,
            mode: ShuffleMode::FullShuffle,
            scope: ShuffleScope::PerImageShared,
        }
    }

    pub fn with_mode(mut self, mode: ShuffleMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_scope(mut self, scope: ShuffleScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn validate(&self) -> Result<(), ShuffleError> {
        if !(0.0..=1.0).contains(&self.epsilon) || self.epsilon.is_nan() {
            return Err(ShuffleError::InvalidConfig(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.patch_h < 1 || self.patch_w < 1 {
            return Err(ShuffleError::InvalidConfig(format!(
                "patch extents must be >= 1, got {}x{}",
                self.patch_h, self.patch_w
            )));
        }
        Ok(())
    }
}

/// A rectangular tile of the spatial plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

/// Non-overlapping, exhaustive tiling of an H x W plane into patches of at
/// most `patch_h` x `patch_w`, truncated at the right and bottom edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    patch_h: usize,
    patch_w: usize,
    rows: usize,
    cols: usize,
}

/// Grid with `ceil(H / patch_h)` rows and `ceil(W / patch_w)` columns.
///
/// # Panics
/// Panics if any argument is zero.
pub fn partition_grid(height: usize, width: usize, patch_h: usize, patch_w: usize) -> PatchGrid {
    assert!(
        height >= 1 && width >= 1 && patch_h >= 1 && patch_w >= 1,
        "partition_grid arguments must be >= 1"
    );
    PatchGrid {
        height,
        width,
        patch_h,
        patch_w,
        rows: height.div_ceil(patch_h),
        cols: width.div_ceil(patch_w),
    }
}

impl PatchGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Patch at grid cell (gr, gc); edge patches are truncated to fit.
    pub fn patch(&self, gr: usize, gc: usize) -> Patch {
        debug_assert!(gr < self.rows && gc < self.cols);
        let row0 = gr * self.patch_h;
        let col0 = gc * self.patch_w;
        Patch {
            row0,
            col0,
            height: self.patch_h.min(self.height - row0),
            width: self.patch_w.min(self.width - col0),
        }
    }

    /// All patches in row-major grid order.
    pub fn patches(&self) -> impl Iterator<Item = Patch> + '_ {
        (0..self.rows).flat_map(move |gr| (0..self.cols).map(move |gc| self.patch(gr, gc)))
    }
}

/// Switch and mapping for one channel plane.
///
/// `mapping` is present exactly when `shuffled` is true and is a gather map
/// over the plane: the output value at flat position `p` (row-major within
/// the plane) is the input value at `mapping[p]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub shuffled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<Vec<u32>>,
}

/// The recorded transform of one `shuffle_forward` call: per (batch, channel)
/// plane, the Bernoulli switch and, when it fired, the position bijection.
///
/// Serializes to JSON as
/// `{"shape": {...}, "channels": [{"shuffled": false}, {"shuffled": true,
/// "mapping": [..]}, ...]}` with `channels` ordered batch-major then channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationRecord {
    pub shape: Shape4,
    pub channels: Vec<ChannelMap>,
}

impl PermutationRecord {
    /// All-identity record (no channel shuffled).
    pub fn identity(shape: Shape4) -> Self {
        PermutationRecord {
            shape,
            channels: vec![
                ChannelMap {
                    shuffled: false,
                    mapping: None,
                };
                shape.batch * shape.channels
            ],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.channels.iter().all(|c| !c.shuffled)
    }

    /// Structural validity: entry count, mapping presence, and that every
    /// present mapping is a bijection of the plane. Used when accepting
    /// records from outside (JSON fixtures).
    pub fn validate(&self) -> Result<(), ShuffleError> {
        let expected = self.shape.batch * self.shape.channels;
        if self.channels.len() != expected {
            return Err(ShuffleError::CorruptRecord(format!(
                "expected {expected} channel entries, got {}",
                self.channels.len()
            )));
        }
        let plane = self.shape.plane();
        for (idx, ch) in self.channels.iter().enumerate() {
            match (&ch.mapping, ch.shuffled) {
                (None, false) => {}
                (None, true) => {
                    return Err(ShuffleError::CorruptRecord(format!(
                        "entry {idx} shuffled but has no mapping"
                    )))
                }
                (Some(_), false) => {
                    return Err(ShuffleError::CorruptRecord(format!(
                        "entry {idx} not shuffled but carries a mapping"
                    )))
                }
                (Some(m), true) => {
                    if m.len() != plane {
                        return Err(ShuffleError::CorruptRecord(format!(
                            "entry {idx} mapping length {} != plane size {plane}",
                            m.len()
                        )));
                    }
                    let mut seen = vec![false; plane];
                    for &src in m {
                        let src = src as usize;
                        if src >= plane || seen[src] {
                            return Err(ShuffleError::CorruptRecord(format!(
                                "entry {idx} mapping is not a bijection"
                            )));
                        }
                        seen[src] = true;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ShuffleError> {
        let rec: PermutationRecord = serde_json::from_str(s)
            .map_err(|e| ShuffleError::CorruptRecord(format!("json: {e}")))?;
        rec.validate()?;
        Ok(rec)
    }

    fn entry(&self, b: usize, c: usize) -> &ChannelMap {
        &self.channels[b * self.shape.channels + c]
    }
}

/// Permutation of one `patch_h` x `patch_w` patch as a flat gather map over
/// its `patch_h * patch_w` elements (row-major within the patch): the value
/// at local output position `d` comes from local input position `perm[d]`.
///
/// `FullShuffle` is one inside-out Fisher–Yates draw over all elements;
/// `RowColShuffle` composes an independent row permutation and column
/// permutation, drawn in that order.
pub fn sample_patch_permutation(
    rng: &mut StreamRng,
    patch_h: usize,
    patch_w: usize,
    mode: ShuffleMode,
) -> Vec<u32> {
    match mode {
        ShuffleMode::FullShuffle => rng.permutation(patch_h * patch_w),
        ShuffleMode::RowColShuffle => {
            let row_perm = rng.permutation(patch_h);
            let col_perm = rng.permutation(patch_w);
            let mut perm = vec![0u32; patch_h * patch_w];
            for i in 0..patch_h {
                for j in 0..patch_w {
                    perm[i * patch_w + j] = row_perm[i] * patch_w as u32 + col_perm[j];
                }
            }
            perm
        }
    }
}

/// Builds the plane-wide gather map for one shuffled plane: identity, then
/// each patch overwritten with a freshly sampled within-patch permutation.
fn sample_plane_mapping(
    rng: &mut StreamRng,
    grid: &PatchGrid,
    width: usize,
    mode: ShuffleMode,
) -> Vec<u32> {
    let mut mapping: Vec<u32> = (0..(grid.height * grid.width) as u32).collect();
    for patch in grid.patches() {
        let perm = sample_patch_permutation(rng, patch.height, patch.width, mode);
        for d in 0..perm.len() {
            let s = perm[d] as usize;
            let (di, dj) = (d / patch.width, d % patch.width);
            let (si, sj) = (s / patch.width, s % patch.width);
            mapping[(patch.row0 + di) * width + (patch.col0 + dj)] =
                ((patch.row0 + si) * width + (patch.col0 + sj)) as u32;
        }
    }
    mapping
}

fn gather_plane(dst: &mut [f64], src: &[f64], mapping: &[u32]) {
    for (d, &s) in mapping.iter().enumerate() {
        dst[d] = src[s as usize];
    }
}

/// Forward PatchShuffle: per image (`PerImageShared`) or per channel
/// (`PerChannelIndependent`), draw the switch with probability
/// `cfg.epsilon`; planes whose switch fired have every patch permuted
/// within itself. The input is not mutated. Returns the transformed tensor
/// and the record needed to replay it or route gradients back.
pub fn shuffle_forward(
    x: &Tensor,
    cfg: &ShuffleConfig,
    rng: &mut StreamRng,
) -> Result<(Tensor, PermutationRecord), ShuffleError> {
    cfg.validate()?;
    let shape = x.shape();
    let grid = partition_grid(shape.height, shape.width, cfg.patch_h, cfg.patch_w);
    let mut out = x.clone();
    let mut record = PermutationRecord::identity(shape);

    for b in 0..shape.batch {
        match cfg.scope {
            ShuffleScope::PerImageShared => {
                if rng.bernoulli(cfg.epsilon) {
                    let mapping = sample_plane_mapping(rng, &grid, shape.width, cfg.mode);
                    for c in 0..shape.channels {
                        gather_plane(out.plane_mut(b, c), x.plane(b, c), &mapping);
                        record.channels[b * shape.channels + c] = ChannelMap {
                            shuffled: true,
                            mapping: Some(mapping.clone()),
                        };
                    }
                }
            }
            ShuffleScope::PerChannelIndependent => {
                for c in 0..shape.channels {
                    if rng.bernoulli(cfg.epsilon) {
                        let mapping = sample_plane_mapping(rng, &grid, shape.width, cfg.mode);
                        gather_plane(out.plane_mut(b, c), x.plane(b, c), &mapping);
                        record.channels[b * shape.channels + c] = ChannelMap {
                            shuffled: true,
                            mapping: Some(mapping),
                        };
                    }
                }
            }
        }
    }
    Ok((out, record))
}

/// Deterministically re-applies a recorded transform to `x`.
pub fn shuffle_apply_recorded(x: &Tensor, rec: &PermutationRecord) -> Result<Tensor, ShuffleError> {
    if x.shape() != rec.shape {
        return Err(ShuffleError::ShapeMismatch {
            record: rec.shape,
            tensor: x.shape(),
        });
    }
    let shape = x.shape();
    let mut out = x.clone();
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let entry = rec.entry(b, c);
            if let Some(mapping) = &entry.mapping {
                if mapping.len() != shape.plane() {
                    return Err(ShuffleError::CorruptRecord(format!(
                        "mapping length {} != plane size {}",
                        mapping.len(),
                        shape.plane()
                    )));
                }
                gather_plane(out.plane_mut(b, c), x.plane(b, c), mapping);
            }
        }
    }
    Ok(out)
}

/// Routes gradients back through a recorded transform: the gradient at an
/// original position equals the upstream gradient at the position the value
/// was moved to (the exact inverse permutation); unshuffled channels are
/// copied verbatim.
pub fn shuffle_backward(
    grad_out: &Tensor,
    rec: &PermutationRecord,
) -> Result<Tensor, ShuffleError> {
    if grad_out.shape() != rec.shape {
        return Err(ShuffleError::ShapeMismatch {
            record: rec.shape,
            tensor: grad_out.shape(),
        });
    }
    let shape = grad_out.shape();
    let mut grad_in = grad_out.clone();
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let entry = rec.entry(b, c);
            if let Some(mapping) = &entry.mapping {
                if mapping.len() != shape.plane() {
                    return Err(ShuffleError::CorruptRecord(format!(
                        "mapping length {} != plane size {}",
                        mapping.len(),
                        shape.plane()
                    )));
                }
                let g_out = grad_out.plane(b, c);
                let g_in = grad_in.plane_mut(b, c);
                // scatter: forward read position mapping[d], so its gradient
                // accumulates (here: lands exactly once) at mapping[d]
                for (d, &s) in mapping.iter().enumerate() {
                    g_in[s as usize] = g_out[d];
                }
            }
        }
    }
    Ok(grad_in)
}

/// Exact count of distinct arrangements reachable by full within-patch
/// shuffling: `(patch_elems!)^num_patches`.
pub fn permutation_count(patch_elems: usize, num_patches: usize) -> BigUint {
    assert!(patch_elems >= 1 && num_patches >= 1);
    let mut factorial = BigUint::from(1u32);
    for k in 2..=patch_elems {
        factorial *= BigUint::from(k);
    }
    factorial.pow(num_patches as u32)
}
