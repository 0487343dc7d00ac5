//! Labeled example matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix with labels and stable example ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Suite-unique example identifiers, used for leakage checks.
    pub ids: Vec<u64>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(dim, features, labels, ids)
    }

    pub fn with_ids(dim: usize, features: Vec<f64>, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Dimension {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if ids.len() != labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: ids.len(),
            });
        }
        Ok(Self {
            dim,
            features,
            labels,
            ids,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
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

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            ids.push(self.ids[i]);
        }
        Self {
            dim: self.dim,
            features,
            labels,
            ids,
        }
    }

    pub fn extend(&mut self, other: &Dataset) {
        assert_eq!(self.dim, other.dim, "feature dimensions differ");
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        self.ids.extend_from_slice(&other.ids);
    }

    pub fn concat<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Dataset>) -> Self {
        let mut out = Self::empty(dim);
        for p in parts {
            out.extend(p);
        }
        out
    }
}

/// Training and in-distribution validation data for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub num_classes: usize,
    pub train: Dataset,
    pub val: Dataset,
}
