use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Real;

/// Row indices of each partition, as persisted by the `split` command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified labeled / unlabeled / test partition of a dataset.
///
/// The true labels of unlabeled rows are kept apart from everything the
/// trainer consumes; only [`SslSplit::hidden_labels_for_evaluation`] exposes
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct SslSplit {
    indices: SplitIndices,
    labeled_labels: Vec<usize>,
    test_labels: Vec<usize>,
    hidden_unlabeled_labels: Vec<usize>,
    labels_per_class: usize,
}

impl SslSplit {
    pub fn indices(&self) -> &SplitIndices {
        &self.indices
    }

    pub fn labeled(&self) -> &[usize] {
        &self.indices.labeled
    }

    pub fn labeled_labels(&self) -> &[usize] {
        &self.labeled_labels
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.indices.unlabeled
    }

    pub fn test(&self) -> &[usize] {
        &self.indices.test
    }

    pub fn test_labels(&self) -> &[usize] {
        &self.test_labels
    }

    pub fn labels_per_class(&self) -> usize {
        self.labels_per_class
    }

    /// True labels of the unlabeled rows. Evaluation only: nothing on the
    /// training path calls this.
    pub fn hidden_labels_for_evaluation(&self) -> &[usize] {
        &self.hidden_unlabeled_labels
    }

    /// Materialises the matrices the trainer is allowed to see.
    pub fn training_data<T: Real>(&self, ds: &Dataset<T>) -> TrainingData<T> {
        let f = ds.features();
        TrainingData {
            labeled: LabeledPool {
                features: f.select_rows(&self.indices.labeled),
                labels: self.labeled_labels.clone(),
            },
            unlabeled: UnlabeledPool {
                features: f.select_rows(&self.indices.unlabeled),
            },
            test: LabeledPool {
                features: f.select_rows(&self.indices.test),
                labels: self.test_labels.clone(),
            },
            class_count: ds.class_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool<T> {
    pub features: Matrix<T>,
    pub labels: Vec<usize>,
}

/// Unlabeled rows. Carries features only.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool<T> {
    pub features: Matrix<T>,
}

/// Everything the trainer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData<T> {
    pub labeled: LabeledPool<T>,
    pub unlabeled: UnlabeledPool<T>,
    pub test: LabeledPool<T>,
    pub class_count: usize,
}

/// Per class: shuffle, take `round(n_c · test_fraction)` rows for test,
/// then `labels_per_class` labeled rows; the rest are unlabeled. Distractor
/// rows always go to the unlabeled pool.
pub fn make_ssl_split<T: Real>(
    ds: &Dataset<T>,
    labels_per_class: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<SslSplit> {
    if labels_per_class == 0 {
        return Err(Error::config("labels_per_class", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config("test_fraction", "must lie in [0, 1)"));
    }
    let k = ds.class_count();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut distractors = Vec::new();
    for (i, &l) in ds.labels().iter().enumerate() {
        if l < k {
            by_class[l].push(i);
        } else {
            distractors.push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = SplitIndices {
        labeled: Vec::new(),
        unlabeled: distractors,
        test: Vec::new(),
    };
    for (class, rows) in by_class.iter_mut().enumerate() {
        rows.shuffle(&mut rng);
        let n_test = (rows.len() as f64 * test_fraction).round() as usize;
        let train = rows.len().saturating_sub(n_test);
        if train < labels_per_class + 1 {
            return Err(Error::config(
                "labels_per_class",
                format!(
                    "class {class} has {train} training rows after test removal, needs {}",
                    labels_per_class + 1
                ),
            ));
        }
        indices.test.extend_from_slice(&rows[..n_test]);
        indices
            .labeled
            .extend_from_slice(&rows[n_test..n_test + labels_per_class]);
        indices.unlabeled.extend_from_slice(&rows[n_test + labels_per_class..]);
    }
    indices.labeled.sort_unstable();
    indices.unlabeled.sort_unstable();
    indices.test.sort_unstable();

    let labels = ds.labels();
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    Ok(SslSplit {
        labeled_labels: pick(&indices.labeled),
        test_labels: pick(&indices.test),
        hidden_unlabeled_labels: pick(&indices.unlabeled),
        indices,
        labels_per_class,
    })
}
