//! Dataset ingestion and generation.
//!
//! Two sources are supported: MNIST-style IDX files and synthetic
//! Gaussian-cluster datasets. Both produce a [`LabeledDataset`] whose inputs
//! are standardized by scalar mean/std computed on the train split only; the
//! same statistics are applied to the test split so the two live in the same
//! normalized-input space as mnemonic codes.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

/// Scalar standardization statistics, recorded so train and test splits are
/// normalized identically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: 0.0, std: 1.0 }
    }

    fn from_values<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> Self {
        let mut n = 0u64;
        let mut sum = 0.0;
        for v in values.clone() {
            sum += v;
            n += 1;
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for v in values {
            let d = v - mean;
            ss += d * d;
        }
        let std = (ss / n as f64).sqrt();
        NormStats {
            mean,
            // Degenerate (constant) data keeps scale 1 instead of dividing by 0.
            std: if std > 0.0 { std } else { 1.0 },
        }
    }
}

/// Immutable labeled dataset in normalized-input units.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    split: SplitTag,
    norm: NormStats,
}

impl LabeledDataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        split: SplitTag,
        norm: NormStats,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows vs {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !inputs.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("dataset inputs"));
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            num_classes,
            split,
            norm,
        })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn norm(&self) -> NormStats {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Indices of all samples labeled `class`, in dataset order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// New dataset holding the given rows (same split tag and stats).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("subset index {bad} out of range")));
        }
        let mut inputs = Array2::zeros((indices.len(), self.feature_dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            inputs.row_mut(r).assign(&self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(inputs, labels, self.num_classes, self.split, self.norm)
    }
}

// --- IDX parsing -----------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn parse_error(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        offset,
        reason: reason.into(),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(parse_error(
            path,
            bytes.len() as u64,
            format!("file truncated while reading a 4-byte header field at byte {offset}"),
        ));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

#[derive(Debug)]
struct RawImages {
    pixels: Vec<u8>,
    count: usize,
    rows: usize,
    cols: usize,
}

fn read_idx_images(path: &Path) -> Result<RawImages> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_error(
            path,
            0,
            format!("magic {magic:#010x}, expected image magic {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(parse_error(
            path,
            bytes.len() as u64,
            format!(
                "header promises {count} images of {rows}x{cols} ({expected} bytes) but file has {}",
                bytes.len()
            ),
        ));
    }
    Ok(RawImages {
        pixels: bytes[16..expected].to_vec(),
        count,
        rows,
        cols,
    })
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_error(
            path,
            0,
            format!("magic {magic:#010x}, expected label magic {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(parse_error(
            path,
            bytes.len() as u64,
            format!("header promises {count} labels but file has {} bytes", bytes.len()),
        ));
    }
    Ok(bytes[8..expected].to_vec())
}

/// Loads an MNIST-style IDX image/label pair.
///
/// Pixels are scaled to `[0, 1]` and standardized: with `train_stats = None`
/// (the train split) the scalar mean/std are computed from this file and
/// recorded; pass the train split's recorded stats when loading the test
/// split so both are normalized identically.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
    split: SplitTag,
    train_stats: Option<NormStats>,
) -> Result<LabeledDataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(parse_error(
            images_path,
            4,
            format!(
                "image count {} does not match label count {}",
                images.count,
                labels.len()
            ),
        ));
    }
    let dim = images.rows * images.cols;
    let scaled: Vec<f64> = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let stats = match train_stats {
        Some(s) => s,
        None => NormStats::from_values(scaled.iter()),
    };
    let normalized: Vec<f64> = scaled.iter().map(|v| (v - stats.mean) / stats.std).collect();
    let inputs = Array2::from_shape_vec((images.count, dim), normalized)
        .map_err(|e| Error::shape(e.to_string()))?;
    let labels: Vec<usize> = labels.into_iter().map(|b| b as usize).collect();
    let num_classes = 10;
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(parse_error(
            labels_path,
            8,
            format!("label value {bad} outside 0-9"),
        ));
    }
    LabeledDataset::new(inputs, labels, num_classes, split, stats)
}

/// Loads train and test IDX pairs, normalizing both with train statistics.
pub fn load_mnist_pair(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_mnist_idx(train_images, train_labels, SplitTag::Train, None)?;
    let test = load_mnist_idx(test_images, test_labels, SplitTag::Test, Some(train.norm()))?;
    Ok((train, test))
}

// --- Synthetic Gaussian clusters --------------------------------------------

/// Generates a synthetic classification task: one seeded standard-normal
/// center per class, samples drawn as `center + cluster_spread * N(0, 1)`.
/// Train and test are disjoint draws; both are standardized by train-split
/// scalar mean/std.
pub fn make_synthetic(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if num_classes == 0 || train_per_class == 0 || test_per_class == 0 || dim == 0 {
        return Err(Error::invalid("all synthetic dataset counts must be positive"));
    }
    if !(cluster_spread.is_finite() && cluster_spread >= 0.0) {
        return Err(Error::invalid("cluster_spread must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::<f64>::zeros((num_classes, dim));
    for v in centers.iter_mut() {
        *v = rng.sample(StandardNormal);
    }

    let draw = |per_class: usize, rng: &mut ChaCha8Rng| {
        let n = num_classes * per_class;
        let mut inputs = Array2::zeros((n, dim));
        let mut labels = Vec::with_capacity(n);
        for c in 0..num_classes {
            for s in 0..per_class {
                let r = c * per_class + s;
                for (j, v) in inputs.row_mut(r).iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = centers[[c, j]] + cluster_spread * z;
                }
                labels.push(c);
            }
        }
        (inputs, labels)
    };

    let (mut train_inputs, train_labels) = draw(train_per_class, &mut rng);
    let (mut test_inputs, test_labels) = draw(test_per_class, &mut rng);

    let stats = NormStats::from_values(train_inputs.iter());
    train_inputs.mapv_inplace(|v| (v - stats.mean) / stats.std);
    test_inputs.mapv_inplace(|v| (v - stats.mean) / stats.std);

    Ok((
        LabeledDataset::new(train_inputs, train_labels, num_classes, SplitTag::Train, stats)?,
        LabeledDataset::new(test_inputs, test_labels, num_classes, SplitTag::Test, stats)?,
    ))
}
