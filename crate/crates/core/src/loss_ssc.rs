//! Weighted semi-supervised contrastive loss.
//!
//! Rows are `[Z_x; Z_s1; Z_s2; Z_c]`. Every row with at least one other row
//! of the same label is an anchor; its term is the mean log-probability of
//! its positives under a softmax over all other rows, weighted by the
//! anchor's λ. The total is normalised by the summed λ of the anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{norm, Matrix, Tape, Var};
use crate::pseudo_label::{LabelWeights, PseudoLabelAssignment};
use crate::scalar::Real;

/// Where the contrastive temperature enters the similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureForm {
    /// `exp(z_i·z_j / T)` in numerator and denominator.
    #[default]
    Scaled,
    /// `exp(z_i·z_j) / T` in numerator and denominator; `T` cancels, so this
    /// is the scaled form at `T = 1`.
    Printed,
}

/// Labels and per-row weights of a contrastive batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SscTargets<T> {
    pub labels: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T: Real> SscTargets<T> {
    /// Labels and weights in row order `[labeled; view 1; view 2; prototypes]`.
    pub fn build(
        labeled: &[usize],
        assignments: &[PseudoLabelAssignment<T>],
        class_count: usize,
        weights: &LabelWeights,
    ) -> Self {
        let mut labels = Vec::with_capacity(labeled.len() + 2 * assignments.len() + class_count);
        let mut w = Vec::with_capacity(labels.capacity());
        labels.extend_from_slice(labeled);
        w.extend(std::iter::repeat_n(T::lit(weights.labeled), labeled.len()));
        for _view in 0..2 {
            labels.extend(assignments.iter().map(|a| a.label));
            w.extend(assignments.iter().map(|a| a.weight));
        }
        labels.extend(0..class_count);
        w.extend(std::iter::repeat_n(T::lit(weights.prototype), class_count));
        Self { labels, weights: w }
    }

    /// Coefficient matrix `C` with `loss = Σ_ij C_ij · log p_ij`, plus the
    /// number of anchors that have positives.
    fn coefficients(&self) -> Result<(Matrix<T>, usize)> {
        let n = self.labels.len();
        let positives: Vec<usize> = (0..n)
            .map(|i| {
                self.labels
                    .iter()
                    .enumerate()
                    .filter(|&(j, &l)| j != i && l == self.labels[i])
                    .count()
            })
            .collect();
        let anchors: Vec<usize> = (0..n).filter(|&i| positives[i] > 0).collect();
        if anchors.is_empty() {
            return Err(Error::EmptyPositives);
        }
        let total: T = anchors.iter().map(|&i| self.weights[i]).sum();
        if !(total > T::zero()) {
            return Err(Error::Domain("anchor weights sum to zero".into()));
        }
        let mut c = Matrix::zeros(n, n);
        for &i in &anchors {
            let coef = -self.weights[i] / (T::from_count(positives[i]) * total);
            for j in 0..n {
                if j != i && self.labels[j] == self.labels[i] {
                    c.set(i, j, coef);
                }
            }
        }
        Ok((c, anchors.len()))
    }
}

/// Records the loss of rows `z` on the tape. Rows are used as given; unit
/// norm is the caller's concern.
pub fn l_ssc<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    targets: &SscTargets<T>,
    temperature: T,
    form: TemperatureForm,
) -> Result<Var> {
    if !(temperature > T::zero()) {
        return Err(Error::config("temperature", "must be positive"));
    }
    let n = tape.value(z).rows();
    if targets.labels.len() != n || targets.weights.len() != n {
        return Err(Error::Shape {
            op: "l_ssc",
            left: tape.value(z).shape(),
            right: (targets.labels.len(), targets.weights.len()),
        });
    }
    let (coeff, _) = targets.coefficients()?;
    let sims = tape.matmul_transpose_b(z, z)?;
    let logits = match form {
        TemperatureForm::Scaled => tape.scale(sims, T::one() / temperature)?,
        TemperatureForm::Printed => sims,
    };
    let lse = tape.row_log_sum_exp(logits, true)?;
    let log_probs = tape.sub_col_broadcast(logits, lse)?;
    tape.weighted_sum(log_probs, coeff)
}

/// Concatenated embeddings, labels, weights and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<T> {
    pub z: Matrix<T>,
    pub targets: SscTargets<T>,
    pub temperature: T,
    pub class_count: usize,
}

impl<T: Real> ContrastiveBatch<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.z.rows();
        if self.targets.labels.len() != n || self.targets.weights.len() != n {
            return Err(Error::Shape {
                op: "ContrastiveBatch",
                left: self.z.shape(),
                right: (self.targets.labels.len(), self.targets.weights.len()),
            });
        }
        if let Some(r) = (0..n).find(|&r| (norm(self.z.row(r)) - T::one()).abs() > T::lit(1e-9)) {
            return Err(Error::Domain(format!("row {r} is not unit norm")));
        }
        let k = self.class_count;
        if n < k || self.targets.labels[n - k..].iter().copied().ne(0..k) {
            return Err(Error::Domain("prototype rows must carry their class labels".into()));
        }
        if !(self.temperature > T::zero()) {
            return Err(Error::config("temperature", "must be positive"));
        }
        Ok(())
    }

    pub fn loss(&self, form: TemperatureForm) -> Result<T> {
        let mut tape = Tape::new();
        let z = tape.constant(self.z.clone());
        let l = l_ssc(&mut tape, z, &self.targets, self.temperature, form)?;
        Ok(tape.value(l).item())
    }
}

/// Assembles the batch from its parts.
#[allow(clippy::too_many_arguments)]
pub fn build_batch<T: Real>(
    z_labeled: &Matrix<T>,
    labeled: &[usize],
    z_view1: &Matrix<T>,
    z_view2: &Matrix<T>,
    assignments: &[PseudoLabelAssignment<T>],
    prototypes: &Matrix<T>,
    weights: &LabelWeights,
    temperature: T,
) -> Result<ContrastiveBatch<T>> {
    if z_labeled.rows() != labeled.len()
        || z_view1.shape() != z_view2.shape()
        || z_view1.rows() != assignments.len()
    {
        return Err(Error::Shape {
            op: "build_batch",
            left: (z_labeled.rows(), labeled.len()),
            right: (z_view1.rows(), assignments.len()),
        });
    }
    let z = Matrix::vstack(&[z_labeled, z_view1, z_view2, prototypes])?;
    let batch = ContrastiveBatch {
        z,
        targets: SscTargets::build(labeled, assignments, prototypes.rows(), weights),
        temperature,
        class_count: prototypes.rows(),
    };
    batch.validate()?;
    Ok(batch)
}
