//! Flat parameter storage with named layer segmentation.
//!
//! Model parameters, gradients, Fisher diagonals, and perturbation
//! amplitudes all share one layout: a flat `f64` vector split into named,
//! contiguous, non-overlapping segments (one segment per weight matrix and
//! one per bias vector). Sharing the [`Segmentation`] lets every consumer
//! check alignment cheaply and address per-layer slices by name.

use std::sync::Arc;

use crate::error::{Error, Result};

/// One named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Tensor shape; its product equals `len`.
    pub shape: Vec<usize>,
}

/// Ordered segment list covering a flat vector exactly.
#[derive(Debug, PartialEq, Eq)]
pub struct Segmentation {
    segments: Vec<Segment>,
    total_len: usize,
}

impl Segmentation {
    /// Builds a segmentation, validating contiguity, coverage, unique names,
    /// and shape/length consistency.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut expected_offset = 0usize;
        for seg in &segments {
            if seg.offset != expected_offset {
                return Err(Error::invalid(format!(
                    "segment {} starts at {} but previous segments end at {}",
                    seg.name, seg.offset, expected_offset
                )));
            }
            if seg.len == 0 {
                return Err(Error::invalid(format!("segment {} is empty", seg.name)));
            }
            let shape_product: usize = seg.shape.iter().product();
            if shape_product != seg.len {
                return Err(Error::invalid(format!(
                    "segment {} shape {:?} does not match length {}",
                    seg.name, seg.shape, seg.len
                )));
            }
            expected_offset += seg.len;
        }
        for (i, a) in segments.iter().enumerate() {
            if segments[i + 1..].iter().any(|b| b.name == a.name) {
                return Err(Error::invalid(format!("duplicate segment name {}", a.name)));
            }
        }
        Ok(Segmentation {
            total_len: expected_offset,
            segments,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Returns an error unless the two segmentations describe the same layout.
pub(crate) fn check_aligned(a: &Arc<Segmentation>, b: &Arc<Segmentation>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "segmentation mismatch: {} segments / {} values vs {} segments / {} values",
            a.segments.len(),
            a.total_len,
            b.segments.len(),
            b.total_len
        )))
    }
}

/// Flat model parameters with named layer segmentation.
#[derive(Debug, Clone)]
pub struct ParameterVector {
    values: Vec<f64>,
    segmentation: Arc<Segmentation>,
}

impl ParameterVector {
    /// Wraps `values` in `segmentation`, requiring exact coverage and finite
    /// entries.
    pub fn new(values: Vec<f64>, segmentation: Arc<Segmentation>) -> Result<Self> {
        if values.len() != segmentation.total_len() {
            return Err(Error::shape(format!(
                "parameter vector has {} values but segmentation covers {}",
                values.len(),
                segmentation.total_len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("parameter vector"));
        }
        Ok(ParameterVector {
            values,
            segmentation,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segmentation(&self) -> &Arc<Segmentation> {
        &self.segmentation
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_slice(&self, name: &str) -> Option<&[f64]> {
        let seg = self.segmentation.segment(name)?;
        Some(&self.values[seg.offset..seg.offset + seg.len])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-parameter loss gradient, aligned with a model's [`ParameterVector`].
#[derive(Debug, Clone)]
pub struct GradientVector {
    values: Vec<f64>,
    segmentation: Arc<Segmentation>,
}

impl GradientVector {
    pub fn new(values: Vec<f64>, segmentation: Arc<Segmentation>) -> Result<Self> {
        if values.len() != segmentation.total_len() {
            return Err(Error::shape(format!(
                "gradient vector has {} values but segmentation covers {}",
                values.len(),
                segmentation.total_len()
            )));
        }
        Ok(GradientVector {
            values,
            segmentation,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segmentation(&self) -> &Arc<Segmentation> {
        &self.segmentation
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn segment_slice(&self, name: &str) -> Option<&[f64]> {
        let seg = self.segmentation.segment(name)?;
        Some(&self.values[seg.offset..seg.offset + seg.len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(name: &str, offset: usize, shape: &[usize]) -> Segment {
        Segment {
            name: name.to_string(),
            offset,
            len: shape.iter().product(),
            shape: shape.to_vec(),
        }
    }

    #[test]
    fn segmentation_accepts_contiguous_cover() {
        let s = Segmentation::new(vec![seg("w", 0, &[2, 3]), seg("b", 6, &[2])]).unwrap();
        assert_eq!(s.total_len(), 8);
        assert_eq!(s.segment("b").unwrap().offset, 6);
    }

    #[test]
    fn segmentation_rejects_gap() {
        let err = Segmentation::new(vec![seg("w", 0, &[2]), seg("b", 3, &[1])]).unwrap_err();
        assert!(err.to_string().contains("starts at 3"));
    }

    #[test]
    fn segmentation_rejects_shape_mismatch() {
        let bad = Segment {
            name: "w".into(),
            offset: 0,
            len: 5,
            shape: vec![2, 3],
        };
        assert!(Segmentation::new(vec![bad]).is_err());
    }

    #[test]
    fn segmentation_rejects_duplicate_names() {
        let err =
            Segmentation::new(vec![seg("w", 0, &[2]), seg("w", 2, &[2])]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn parameter_vector_rejects_non_finite() {
        let s = Arc::new(Segmentation::new(vec![seg("w", 0, &[2])]).unwrap());
        assert!(ParameterVector::new(vec![1.0, f64::NAN], s).is_err());
    }
}
