//! Dataset ingestion (IDX container), preprocessing, pollution generators,
//! and mini-batching.
//!
//! Images live in `[0, 1]` until mean subtraction. Pollution (salt-and-pepper
//! noise, occlusion blocks) is applied once to a dataset copy in raw `[0, 1]`
//! space, before mean subtraction; "white" and "black" only mean anything
//! pre-normalization.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;
use crate::tensor::{Shape4, Tensor};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated (need {need} bytes, have {have})")]
    Truncated {
        path: PathBuf,
        need: usize,
        have: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Shape4, Shape4),
    #[error("dataset is empty")]
    Empty,
    #[error("batch size must be >= 1")]
    BadBatchSize,
    #[error("subset size {requested} exceeds dataset size {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("IDX export requires single-channel images, got {0} channels")]
    NotSingleChannel(usize),
    #[error("invalid pollution spec: {0}")]
    InvalidPollution(String),
}

/// Labeled image set. Images are (N, C, H, W); the loader produces C = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>, num_classes: usize) -> Result<Self, DataError> {
        if images.shape().batch != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.shape().batch,
                labels: labels.len(),
            });
        }
        for &label in &labels {
            if label as usize >= num_classes {
                return Err(DataError::LabelOutOfRange { label, num_classes });
            }
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape of a single image, batch dim set to 1.
    pub fn image_shape(&self) -> Shape4 {
        let s = self.images.shape();
        Shape4::new(1, s.channels, s.height, s.width)
    }

    /// First `count` samples, in stored order.
    pub fn subset(&self, count: usize) -> Result<Dataset, DataError> {
        if count > self.len() {
            return Err(DataError::SubsetTooLarge {
                requested: count,
                available: self.len(),
            });
        }
        if count == 0 {
            return Err(DataError::Empty);
        }
        let s = self.images.shape();
        let shape = Shape4::new(count, s.channels, s.height, s.width);
        let take = count * s.channels * s.plane();
        let images = Tensor::from_vec(shape, self.images.data()[..take].to_vec())
            .expect("subset of a valid tensor is valid");
        Ok(Dataset {
            images,
            labels: self.labels[..count].to_vec(),
            num_classes: self.num_classes,
        })
    }

    /// Contiguous batch `[start, end)` in stored order.
    ///
    /// # Panics
    /// Panics if the range is empty or out of bounds.
    pub fn batch_range(&self, start: usize, end: usize) -> (Tensor, &[u8]) {
        assert!(start < end && end <= self.len(), "bad batch range");
        let s = self.images.shape();
        let plane = s.channels * s.plane();
        let shape = Shape4::new(end - start, s.channels, s.height, s.width);
        let images =
            Tensor::from_vec(shape, self.images.data()[start * plane..end * plane].to_vec())
                .expect("slice of a valid tensor is valid");
        (images, &self.labels[start..end])
    }

    /// Batch tensor and labels for a set of sample indices.
    fn gather(&self, indices: &[usize]) -> (Tensor, Vec<u8>) {
        let s = self.images.shape();
        let plane = s.channels * s.plane();
        let shape = Shape4::new(indices.len(), s.channels, s.height, s.width);
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &idx in indices {
            data.extend_from_slice(&self.images.data()[idx * plane..(idx + 1) * plane]);
            labels.push(self.labels[idx]);
        }
        let images = Tensor::from_vec(shape, data).expect("gathered batch is valid");
        (images, labels)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            need: end,
            have: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Loads an IDX image/label file pair. Pixel bytes map to `[0, 1]` via /255.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let img_bytes = read_file(images_path)?;
    let magic = read_u32_be(&img_bytes, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let height = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let width = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let need = 16 + count * height * width;
    if img_bytes.len() < need {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            need,
            have: img_bytes.len(),
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let magic = read_u32_be(&lbl_bytes, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32_be(&lbl_bytes, 4, labels_path)? as usize;
    let need = 8 + label_count;
    if lbl_bytes.len() < need {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            need,
            have: lbl_bytes.len(),
        });
    }
    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if count == 0 || height == 0 || width == 0 {
        return Err(DataError::Empty);
    }

    let data: Vec<f64> = img_bytes[16..16 + count * height * width]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let images = Tensor::from_vec(Shape4::new(count, 1, height, width), data)
        .expect("byte-derived pixels are finite");
    let labels = lbl_bytes[8..8 + label_count].to_vec();
    let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1).max(10);
    Dataset::new(images, labels, num_classes)
}

/// Writes a dataset back to an IDX pair (values clamped to `[0, 1]` and
/// rounded to bytes). Single-channel images only.
pub fn save_idx(
    d: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let s = d.images.shape();
    if s.channels != 1 {
        return Err(DataError::NotSingleChannel(s.channels));
    }
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut img_out = Vec::with_capacity(16 + d.images.data().len());
    img_out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img_out.extend_from_slice(&(s.batch as u32).to_be_bytes());
    img_out.extend_from_slice(&(s.height as u32).to_be_bytes());
    img_out.extend_from_slice(&(s.width as u32).to_be_bytes());
    img_out.extend(
        d.images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );

    let mut lbl_out = Vec::with_capacity(8 + d.labels.len());
    lbl_out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl_out.extend_from_slice(&(d.labels.len() as u32).to_be_bytes());
    lbl_out.extend_from_slice(&d.labels);

    for (path, bytes) in [(images_path, &img_out), (labels_path, &lbl_out)] {
        let mut f = fs::File::create(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(bytes).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Subtracts the per-pixel mean of `train` from both datasets. Returns the
/// centered pair and the mean image (shape (1, C, H, W)).
pub fn subtract_mean(
    train: &Dataset,
    other: &Dataset,
) -> Result<(Dataset, Dataset, Tensor), DataError> {
    let st = train.images.shape();
    let so = other.images.shape();
    if (st.channels, st.height, st.width) != (so.channels, so.height, so.width) {
        return Err(DataError::ShapeMismatch(st, so));
    }
    if train.is_empty() {
        return Err(DataError::Empty);
    }

    let plane = st.channels * st.plane();
    let mut mean = vec![0.0; plane];
    for b in 0..st.batch {
        let img = &train.images.data()[b * plane..(b + 1) * plane];
        for (m, &v) in mean.iter_mut().zip(img) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= st.batch as f64;
    }

    let center = |d: &Dataset| {
        let mut data = d.images.data().to_vec();
        for (k, v) in data.iter_mut().enumerate() {
            *v -= mean[k % plane];
        }
        Dataset {
            images: Tensor::from_vec(d.images.shape(), data).expect("centered data is finite"),
            labels: d.labels.clone(),
            num_classes: d.num_classes,
        }
    };

    let centered_train = center(train);
    let centered_other = center(other);
    let mean_image = Tensor::from_vec(Shape4::new(1, st.channels, st.height, st.width), mean)
        .expect("mean of finite data is finite");
    Ok((centered_train, centered_other, mean_image))
}

/// Salt-and-pepper noise: each pixel is independently hit with probability
/// `tau1` and, when hit, replaced by 1 (white) or 0 (black) on a fair coin.
/// Pixels are visited image by image in row-major order. The input is not
/// mutated.
pub fn salt_pepper(d: &Dataset, tau1: f64, rng: &mut StreamRng) -> Dataset {
    assert!((0.0..=1.0).contains(&tau1), "tau1 must be in [0, 1]");
    let mut data = d.images.data().to_vec();
    for v in &mut data {
        if rng.bernoulli(tau1) {
            *v = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
        }
    }
    Dataset {
        images: Tensor::from_vec(d.images.shape(), data).expect("noise values are finite"),
        labels: d.labels.clone(),
        num_classes: d.num_classes,
    }
}

/// Occlusion: each spatial position is independently chosen as a center with
/// probability `tau2`; a `block` x `block` all-zero square (clipped at the
/// borders) is imposed around every chosen center, across all channels.
/// Center draws precede any writes, so they are independent of pixel values.
/// The input is not mutated.
pub fn occlude(d: &Dataset, tau2: f64, block: usize, rng: &mut StreamRng) -> Dataset {
    assert!((0.0..=1.0).contains(&tau2), "tau2 must be in [0, 1]");
    assert!(block >= 1 && block % 2 == 1, "block must be odd and >= 1");
    let s = d.images.shape();
    let mut data = d.images.data().to_vec();
    let half = block / 2;
    for b in 0..s.batch {
        let mut centers = Vec::new();
        for i in 0..s.height {
            for j in 0..s.width {
                if rng.bernoulli(tau2) {
                    centers.push((i, j));
                }
            }
        }
        for (ci, cj) in centers {
            let i0 = ci.saturating_sub(half);
            let i1 = (ci + half).min(s.height - 1);
            let j0 = cj.saturating_sub(half);
            let j1 = (cj + half).min(s.width - 1);
            for c in 0..s.channels {
                let base = ((b * s.channels + c) * s.height) * s.width;
                for i in i0..=i1 {
                    for j in j0..=j1 {
                        data[base + i * s.width + j] = 0.0;
                    }
                }
            }
        }
    }
    Dataset {
        images: Tensor::from_vec(s, data).expect("zeroed values are finite"),
        labels: d.labels.clone(),
        num_classes: d.num_classes,
    }
}

/// Which splits a pollution pass touches. Noise is always applied in raw
/// [0, 1] pixel space, before any mean subtraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollutionTarget {
    TrainAndTest,
    TestOnly,
}

/// Noise family plus its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PollutionKind {
    SaltPepper { tau1: f64 },
    Occlusion { tau2: f64, block: usize },
}

/// Declarative description of a pollution pass: what noise, and which splits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PollutionSpec {
    #[serde(flatten)]
    pub kind: PollutionKind,
    pub target: PollutionTarget,
}

impl PollutionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidPollution(msg));
        match self.kind {
            PollutionKind::SaltPepper { tau1 } => {
                if !(0.0..=1.0).contains(&tau1) || !tau1.is_finite() {
                    return bad(format!("tau1 = {tau1} outside [0, 1]"));
                }
            }
            PollutionKind::Occlusion { tau2, block } => {
                if !(0.0..=1.0).contains(&tau2) || !tau2.is_finite() {
                    return bad(format!("tau2 = {tau2} outside [0, 1]"));
                }
                if block == 0 || block % 2 == 0 {
                    return bad(format!("block = {block} must be odd and >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Applies the configured noise to a copy of `d`.
    pub fn apply(&self, d: &Dataset, rng: &mut StreamRng) -> Dataset {
        match self.kind {
            PollutionKind::SaltPepper { tau1 } => salt_pepper(d, tau1, rng),
            PollutionKind::Occlusion { tau2, block } => occlude(d, tau2, block, rng),
        }
    }

    pub fn touches_train(&self) -> bool {
        self.target == PollutionTarget::TrainAndTest
    }
}

/// One epoch of mini-batches: a seeded shuffle of the sample order,
/// partitioned into `batch_size` chunks; the final short batch is emitted.
pub fn minibatches<'a>(
    d: &'a Dataset,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<Minibatches<'a>, DataError> {
    if batch_size == 0 {
        return Err(DataError::BadBatchSize);
    }
    if d.is_empty() {
        return Err(DataError::Empty);
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    rng.shuffle(&mut order);
    Ok(Minibatches {
        dataset: d,
        order,
        batch_size,
        pos: 0,
    })
}

pub struct Minibatches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Minibatches<'_> {
    type Item = (Tensor, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}
