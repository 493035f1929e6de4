use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Labelled samples stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    class_count: usize,
    sample_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        class_count: usize,
        sample_shape: Vec<usize>,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::Schema("class count must be positive".into()));
        }
        if sample_shape.is_empty() || sample_shape.contains(&0) {
            return Err(Error::Schema(format!(
                "invalid sample shape {sample_shape:?}"
            )));
        }
        let dim: usize = sample_shape.iter().product();
        if features.len() != dim * labels.len() {
            return Err(Error::Alignment(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Schema(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            sample_shape,
        })
    }

    pub fn from_samples(
        samples: &[Vec<f64>],
        labels: Vec<usize>,
        class_count: usize,
        sample_shape: Vec<usize>,
    ) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Alignment(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let dim: usize = sample_shape.iter().product();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::Alignment(format!(
                "sample of length {} does not match shape {sample_shape:?}",
                bad.len()
            )));
        }
        Dataset::new(samples.concat(), labels, class_count, sample_shape)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Domain(format!(
                "index {bad} outside dataset of {}",
                self.len()
            )));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Dataset {
            features,
            labels,
            class_count: self.class_count,
            sample_shape: self.sample_shape.clone(),
        })
    }

    /// Same rows viewed with a different sample shape of equal size.
    pub fn reshaped(&self, sample_shape: Vec<usize>) -> Result<Dataset> {
        let dim: usize = sample_shape.iter().product();
        if dim != self.dim() || sample_shape.contains(&0) {
            return Err(Error::Alignment(format!(
                "cannot view samples of shape {:?} as {sample_shape:?}",
                self.sample_shape
            )));
        }
        Ok(Dataset {
            sample_shape,
            ..self.clone()
        })
    }

    pub(crate) fn with_labels(&self, labels: Vec<usize>) -> Dataset {
        Dataset {
            labels,
            ..self.clone()
        }
    }

    pub(crate) fn with_features(&self, features: Vec<f64>) -> Dataset {
        Dataset {
            features,
            ..self.clone()
        }
    }
}
