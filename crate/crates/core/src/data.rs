//! Labeled and unlabeled samples.
//!
//! Features are stored as a dense row-major matrix. Labels are class indices;
//! everything downstream of task construction uses binary labels in `{0, 1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled sample `S`, optionally tagged with the base dataset each row came
/// from and with per-row importance weights `w(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
    origin: Option<Vec<u8>>,
    weights: Option<Vec<f64>>,
}

/// Unlabeled sample `S'_x` drawn from a target marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSample {
    dim: usize,
    features: Vec<f64>,
    origin: Option<Vec<u8>>,
}

fn check_matrix(dim: usize, features: &[f64]) -> Result<usize> {
    if dim == 0 {
        return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
    }
    if !features.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(format!(
            "feature buffer of length {} is not a multiple of dim {dim}",
            features.len()
        )));
    }
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite feature in row {}",
            i / dim
        )));
    }
    Ok(features.len() / dim)
}

impl LabeledSample {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        let rows = check_matrix(dim, &features)?;
        if rows != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: labels.len(),
            });
        }
        Ok(Self {
            dim,
            features,
            labels,
            origin: None,
            weights: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u32>) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        Self::new(dim, rows.concat(), labels)
    }

    pub fn with_origin(mut self, origin: Vec<u8>) -> Result<Self> {
        if origin.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: origin.len(),
            });
        }
        self.origin = Some(origin);
        Ok(self)
    }

    /// Attach importance weights. Weights must be finite and non-negative;
    /// zero marks a row outside the target support.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidArgument(format!("invalid importance weight {w}")));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn origin(&self) -> Option<&[u8]> {
        self.origin.as_deref()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Error unless every label is 0 or 1.
    pub fn ensure_binary(&self) -> Result<()> {
        match self.labels.iter().position(|&y| y > 1) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "row {i} has label {} outside {{0,1}}",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// Rows at `indices`, in the given order, carrying origin and weights along.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            origin: self
                .origin
                .as_ref()
                .map(|o| indices.iter().map(|&i| o[i]).collect()),
            weights: self
                .weights
                .as_ref()
                .map(|w| indices.iter().map(|&i| w[i]).collect()),
        }
    }

    /// Row-wise concatenation. Optional columns survive only if both sides
    /// carry them.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let join = |a: Option<&Vec<u8>>, b: Option<&Vec<u8>>| match (a, b) {
            (Some(a), Some(b)) => Some([a.as_slice(), b.as_slice()].concat()),
            _ => None,
        };
        Ok(Self {
            dim: self.dim,
            features: [self.features.as_slice(), other.features.as_slice()].concat(),
            labels: [self.labels.as_slice(), other.labels.as_slice()].concat(),
            origin: join(self.origin.as_ref(), other.origin.as_ref()),
            weights: match (&self.weights, &other.weights) {
                (Some(a), Some(b)) => Some([a.as_slice(), b.as_slice()].concat()),
                _ => None,
            },
        })
    }

    /// Drop the labels.
    pub fn to_unlabeled(&self) -> UnlabeledSample {
        UnlabeledSample {
            dim: self.dim,
            features: self.features.clone(),
            origin: self.origin.clone(),
        }
    }
}

impl UnlabeledSample {
    pub fn new(dim: usize, features: Vec<f64>) -> Result<Self> {
        check_matrix(dim, &features)?;
        Ok(Self {
            dim,
            features,
            origin: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn with_origin(mut self, origin: Vec<u8>) -> Result<Self> {
        if origin.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: origin.len(),
            });
        }
        self.origin = Some(origin);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn origin(&self) -> Option<&[u8]> {
        self.origin.as_deref()
    }
}
