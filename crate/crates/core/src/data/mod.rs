//! Datasets, synthetic generators, CSV ingestion and labeled/unlabeled splits.

mod csv_io;
mod split;
mod synthetic;

pub use csv_io::{load_csv, load_feature_matrix, save_csv, ColumnRef, CsvSchema};
pub use split::{make_ssl_split, LabeledPool, SplitIndices, SslSplit, TrainingData, UnlabeledPool};
pub use synthetic::{generate_gaussian_mixture, generate_rings, GaussianMixtureSpec, RingsSpec};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Real;

/// Feature rows with class labels.
///
/// Rows whose label is `>= class_count` are distractors: samples from
/// classes outside the labeled task that only ever land in the unlabeled
/// pool of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    features: Matrix<T>,
    labels: Vec<usize>,
    class_count: usize,
    distractor_classes: usize,
}

impl<T: Real> Dataset<T> {
    /// Validates labels against `class_count` and requires every class to
    /// be present.
    pub fn new(
        name: impl Into<String>,
        features: Matrix<T>,
        labels: Vec<usize>,
        class_count: usize,
        distractor_classes: usize,
    ) -> Result<Self> {
        let ds = Self::new_unchecked_classes(name, features, labels, class_count, distractor_classes)?;
        if let Some(c) = ds.missing_classes().first() {
            return Err(Error::config("labels", format!("class {c} has no samples")));
        }
        Ok(ds)
    }

    pub(crate) fn new_unchecked_classes(
        name: impl Into<String>,
        features: Matrix<T>,
        labels: Vec<usize>,
        class_count: usize,
        distractor_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape {
                op: "Dataset::new",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        let limit = class_count + distractor_classes;
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= limit) {
            return Err(Error::config(
                "labels",
                format!("row {row} has label {l}, outside [0, {limit})"),
            ));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            class_count,
            distractor_classes,
        })
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn distractor_classes(&self) -> usize {
        self.distractor_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_distractor(&self, row: usize) -> bool {
        self.labels[row] >= self.class_count
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            if l < self.class_count {
                counts[l] += 1;
            }
        }
        counts
    }

    fn missing_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| c)
            .collect()
    }

    /// Per-feature standard deviation averaged over columns.
    pub fn mean_feature_std(&self) -> T {
        mean_column_std(&self.features)
    }
}

/// Average over columns of the population standard deviation.
pub fn mean_column_std<T: Real>(m: &Matrix<T>) -> T {
    if m.rows() == 0 || m.cols() == 0 {
        return T::zero();
    }
    let n = T::from_count(m.rows());
    let mut total = T::zero();
    for c in 0..m.cols() {
        let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<T>() / n;
        let var = (0..m.rows())
            .map(|r| {
                let d = m.get(r, c) - mean;
                d * d
            })
            .sum::<T>()
            / n;
        total = total + var.sqrt();
    }
    total / T::from_count(m.cols())
}
