//! Class-specific mnemonic codes.
//!
//! A mnemonic code is a fixed random signal in normalized-input space, one
//! (or more) per class, drawn i.i.d. from the standard normal distribution.
//! Codes are generated from a recorded seed and persist bit-exactly.

use std::collections::BTreeSet;
use std::path::Path;

use base64::Engine;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CODEBOOK_FORMAT: &str = "forgetlab-codebook-v1";

/// Per-class random signals with their generation seed.
///
/// Codes are stored class-major: all codes of class 0, then class 1, ...
#[derive(Debug, Clone, PartialEq)]
pub struct MnemonicCodebook {
    values: Vec<f64>,
    num_classes: usize,
    feature_dim: usize,
    codes_per_class: usize,
    seed: u64,
}

/// Draws `codes_per_class` standard-normal codes for each class.
///
/// The draw order is fixed (class-major, then code, then feature), so the
/// same seed always reproduces the same codebook.
pub fn generate_codebook(
    num_classes: usize,
    feature_dim: usize,
    codes_per_class: usize,
    seed: u64,
) -> Result<MnemonicCodebook> {
    if num_classes == 0 || feature_dim == 0 || codes_per_class == 0 {
        return Err(Error::invalid("codebook counts must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = num_classes * codes_per_class * feature_dim;
    let mut values = Vec::with_capacity(total);
    for _ in 0..total {
        values.push(rng.sample::<f64, _>(StandardNormal));
    }
    Ok(MnemonicCodebook {
        values,
        num_classes,
        feature_dim,
        codes_per_class,
        seed,
    })
}

impl MnemonicCodebook {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn codes_per_class(&self) -> usize {
        self.codes_per_class
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The `idx`-th code vector of `class`.
    pub fn code(&self, class: usize, idx: usize) -> &[f64] {
        assert!(class < self.num_classes, "class {class} out of range");
        assert!(idx < self.codes_per_class, "code index {idx} out of range");
        let start = (class * self.codes_per_class + idx) * self.feature_dim;
        &self.values[start..start + self.feature_dim]
    }

    /// True when every class in `classes` has codes here.
    pub fn covers(&self, classes: &BTreeSet<usize>) -> bool {
        classes.iter().all(|&c| c < self.num_classes)
    }

    /// All codes of the given classes as an evaluation batch with labels.
    pub fn eval_batch(&self, classes: &BTreeSet<usize>) -> Result<(Array2<f64>, Vec<usize>)> {
        if !self.covers(classes) {
            return Err(Error::invalid("class set not covered by codebook"));
        }
        if classes.is_empty() {
            return Err(Error::invalid("empty class set"));
        }
        let n = classes.len() * self.codes_per_class;
        let mut batch = Array2::zeros((n, self.feature_dim));
        let mut labels = Vec::with_capacity(n);
        let mut r = 0;
        for &c in classes {
            for i in 0..self.codes_per_class {
                batch
                    .row_mut(r)
                    .assign(&ndarray::ArrayView1::from(self.code(c, i)));
                labels.push(c);
                r += 1;
            }
        }
        Ok((batch, labels))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CodebookFile {
            format: CODEBOOK_FORMAT.to_string(),
            seed: self.seed,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            codes_per_class: self.codes_per_class,
            values_b64: encode_f64s(&self.values),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CodebookFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != CODEBOOK_FORMAT {
            return Err(Error::Format(format!(
                "unknown codebook format {:?}",
                file.format
            )));
        }
        let values = decode_f64s(&file.values_b64)?;
        let expected = file.num_classes * file.codes_per_class * file.feature_dim;
        if values.len() != expected {
            return Err(Error::Format(format!(
                "codebook holds {} values, header implies {expected}",
                values.len()
            )));
        }
        Ok(MnemonicCodebook {
            values,
            num_classes: file.num_classes,
            feature_dim: file.feature_dim,
            codes_per_class: file.codes_per_class,
            seed: file.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    format: String,
    seed: u64,
    num_classes: usize,
    feature_dim: usize,
    codes_per_class: usize,
    values_b64: String,
}

/// Little-endian f64 bytes, base64 encoded. Bit-exact round trip.
pub(crate) fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn decode_f64s(encoded: &str) -> Result<Vec<f64>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(encoded)
        .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_codebook() {
        let a = generate_codebook(10, 784, 1, 7).unwrap();
        let b = generate_codebook(10, 784, 1, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_codebook(10, 784, 1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn code_statistics_look_standard_normal() {
        let cb = generate_codebook(10, 784, 1, 3).unwrap();
        let code = cb.code(0, 0);
        let mean = code.iter().sum::<f64>() / code.len() as f64;
        let var = code.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / code.len() as f64;
        assert!(mean.abs() < 0.15, "mean {mean}");
        assert!((var - 1.0).abs() < 0.25, "var {var}");
    }

    #[test]
    fn one_code_per_class_means_ten_vectors() {
        let cb = generate_codebook(10, 32, 1, 0).unwrap();
        let all: BTreeSet<usize> = (0..10).collect();
        let (batch, labels) = cb.eval_batch(&all).unwrap();
        assert_eq!(batch.nrows(), 10);
        assert_eq!(labels, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn distinct_classes_are_uncorrelated() {
        let cb = generate_codebook(2, 784, 1, 11).unwrap();
        let (a, b) = (cb.code(0, 0), cb.code(1, 0));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>()
            / a.len() as f64;
        let sd = |v: &[f64], m: f64| {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let corr = cov / (sd(a, ma) * sd(b, mb));
        assert!(corr.abs() < 0.15, "corr {corr}");
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codebook.json");
        let cb = generate_codebook(5, 17, 2, 99).unwrap();
        cb.save(&path).unwrap();
        let loaded = MnemonicCodebook::load(&path).unwrap();
        assert_eq!(cb, loaded);
        for (a, b) in cb.values.iter().zip(&loaded.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(generate_codebook(0, 4, 1, 0).is_err());
        assert!(generate_codebook(2, 0, 1, 0).is_err());
        assert!(generate_codebook(2, 4, 0, 0).is_err());
    }
}
