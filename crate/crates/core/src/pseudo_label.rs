//! Prototype-based pseudo-labels for unlabeled instances.
//!
//! Class probabilities come from a temperature-scaled softmax over cosine
//! similarities between a weak-view embedding and the class prototypes.
//! An instance whose top probability clears `tau` takes that class for both
//! of its strong views; any other instance `i` gets the label `K + i`, which
//! is unique within the batch, so its two views are positives only for each
//! other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, dot, softmax, Matrix};
use crate::scalar::Real;

/// Per-row weights of the contrastive loss by row type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelWeights {
    pub labeled: f64,
    pub confident: f64,
    pub prototype: f64,
    pub unconfident: f64,
}

impl Default for LabelWeights {
    fn default() -> Self {
        Self {
            labeled: 1.0,
            confident: 1.0,
            prototype: 1.0,
            unconfident: 0.2,
        }
    }
}

impl LabelWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("labeled", self.labeled),
            ("confident", self.confident),
            ("prototype", self.prototype),
            ("unconfident", self.unconfident),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("lambda_weights.{name}"),
                    "must be finite and non-negative",
                ));
            }
        }
        if self.unconfident > self.confident {
            log::warn!(
                "lambda_weights.unconfident ({}) exceeds lambda_weights.confident ({})",
                self.unconfident,
                self.confident
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelAssignment<T> {
    pub probs: Vec<T>,
    pub confidence: T,
    pub class: usize,
    pub confident: bool,
    /// `class` when confident, otherwise `K + i`.
    pub label: usize,
    pub weight: T,
}

/// `softmax(Z_c · z / t_prime)`.
pub fn class_probs<T: Real>(prototypes: &Matrix<T>, z: &[T], t_prime: T) -> Result<Vec<T>> {
    if !(t_prime > T::zero()) {
        return Err(Error::config("t_prime", "temperature must be positive"));
    }
    if z.len() != prototypes.cols() {
        return Err(Error::Shape {
            op: "class_probs",
            left: prototypes.shape(),
            right: (1, z.len()),
        });
    }
    let logits: Vec<T> = prototypes.row_iter().map(|p| dot(p, z) / t_prime).collect();
    softmax(&logits)
}

/// Pseudo-labels for every row of `weak_embeddings`.
pub fn assign<T: Real>(
    prototypes: &Matrix<T>,
    weak_embeddings: &Matrix<T>,
    t_prime: T,
    tau: T,
    weights: &LabelWeights,
) -> Result<Vec<PseudoLabelAssignment<T>>> {
    if !(tau > T::zero() && tau < T::one()) {
        return Err(Error::config("tau", "threshold must lie in (0, 1)"));
    }
    let k = prototypes.rows();
    weak_embeddings
        .row_iter()
        .enumerate()
        .map(|(i, z)| {
            let probs = class_probs(prototypes, z, t_prime)?;
            // Argmax over raw similarities: identical to the argmax of the
            // probabilities except when rounding merges near-ties.
            let sims: Vec<T> = prototypes.row_iter().map(|p| dot(p, z)).collect();
            let class = argmax(&sims);
            let confidence = probs[class];
            let confident = confidence > tau;
            Ok(PseudoLabelAssignment {
                label: if confident { class } else { k + i },
                weight: T::lit(if confident {
                    weights.confident
                } else {
                    weights.unconfident
                }),
                probs,
                confidence,
                class,
                confident,
            })
        })
        .collect()
}

/// Counts logged per step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AssignmentStats {
    pub confident: usize,
    pub unconfident: usize,
    pub mean_confidence: f64,
}

pub fn summarize<T: Real>(assignments: &[PseudoLabelAssignment<T>]) -> AssignmentStats {
    let confident = assignments.iter().filter(|a| a.confident).count();
    let mean_confidence = if assignments.is_empty() {
        0.0
    } else {
        assignments
            .iter()
            .map(|a| a.confidence.to_f64_lossy())
            .sum::<f64>()
            / assignments.len() as f64
    };
    AssignmentStats {
        confident,
        unconfident: assignments.len() - confident,
        mean_confidence,
    }
}
