//! Weak and strong stochastic perturbations for feature vectors.
//!
//! Weak views stay close to the source (small jitter, mild scaling) and are
//! used for pseudo-labeling. Strong views add larger jitter, coordinate
//! dropout and, in two dimensions, a random rotation.
//!
//! Every row is transformed with its own random stream, so a row's output
//! depends only on its input and its stream, never on its batch position.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    pub jitter_sigma: f64,
    pub dropout_prob: f64,
    pub scale_range: (f64, f64),
    pub rotation_max: f64,
}

impl AugmentPolicy {
    /// A policy that returns its input unchanged.
    pub fn identity(kind: AugmentKind) -> Self {
        Self {
            kind,
            jitter_sigma: 0.0,
            dropout_prob: 0.0,
            scale_range: (1.0, 1.0),
            rotation_max: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0) || !self.jitter_sigma.is_finite() {
            return Err(Error::config("jitter_sigma", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("dropout_prob", "must lie in [0, 1)"));
        }
        if self.kind == AugmentKind::Weak && self.dropout_prob != 0.0 {
            return Err(Error::config("dropout_prob", "weak policy cannot drop coordinates"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("scale_range", "bounds must be positive with lo <= hi"));
        }
        if !(self.rotation_max >= 0.0) || !self.rotation_max.is_finite() {
            return Err(Error::config("rotation_max", "must be finite and non-negative"));
        }
        Ok(())
    }

    fn transform_row<T: Real>(&self, row: &mut [T], rng: &mut ChaCha8Rng) {
        if row.len() == 2 && self.rotation_max > 0.0 {
            let angle = rng.random_range(-self.rotation_max..=self.rotation_max);
            let (s, c) = angle.sin_cos();
            let (x, y) = (row[0].to_f64_lossy(), row[1].to_f64_lossy());
            row[0] = T::lit(c * x - s * y);
            row[1] = T::lit(s * x + c * y);
        }
        let (lo, hi) = self.scale_range;
        if hi > lo {
            let s = T::lit(rng.random_range(lo..=hi));
            row.iter_mut().for_each(|v| *v = *v * s);
        } else if lo != 1.0 {
            row.iter_mut().for_each(|v| *v = *v * T::lit(lo));
        }
        if self.dropout_prob > 0.0 {
            for v in row.iter_mut() {
                if rng.random_bool(self.dropout_prob) {
                    *v = T::zero();
                }
            }
        }
        if self.jitter_sigma > 0.0 {
            for v in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = *v + T::lit(self.jitter_sigma * z);
            }
        }
    }
}

/// One independent stream per row, seeded from `rng`.
pub fn row_streams(rng: &mut impl RngCore, rows: usize) -> Vec<ChaCha8Rng> {
    (0..rows).map(|_| ChaCha8Rng::seed_from_u64(rng.next_u64())).collect()
}

/// Applies `policy` to each row using the matching stream, advancing it.
pub fn apply_with_streams<T: Real>(
    policy: &AugmentPolicy,
    batch: &Matrix<T>,
    streams: &mut [ChaCha8Rng],
) -> Result<Matrix<T>> {
    if streams.len() != batch.rows() {
        return Err(Error::Shape {
            op: "augment",
            left: batch.shape(),
            right: (streams.len(), 1),
        });
    }
    let mut out = batch.clone();
    for (r, stream) in streams.iter_mut().enumerate() {
        policy.transform_row(out.row_mut(r), stream);
    }
    Ok(out)
}

pub fn apply<T: Real>(policy: &AugmentPolicy, batch: &Matrix<T>, rng: &mut impl RngCore) -> Result<Matrix<T>> {
    if batch.rows() == 0 {
        return Err(Error::Domain("augment: empty batch".into()));
    }
    let mut streams = row_streams(rng, batch.rows());
    apply_with_streams(policy, batch, &mut streams)
}

/// Two strong views of the same rows; row `i` of both views comes from
/// source row `i` and its stream.
pub fn two_strong_views_with_streams<T: Real>(
    policy: &AugmentPolicy,
    batch: &Matrix<T>,
    streams: &mut [ChaCha8Rng],
) -> Result<(Matrix<T>, Matrix<T>)> {
    let first = apply_with_streams(policy, batch, streams)?;
    let second = apply_with_streams(policy, batch, streams)?;
    Ok((first, second))
}

pub fn two_strong_views<T: Real>(
    policy: &AugmentPolicy,
    batch: &Matrix<T>,
    rng: &mut impl RngCore,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if batch.rows() == 0 {
        return Err(Error::Domain("augment: empty batch".into()));
    }
    let mut streams = row_streams(rng, batch.rows());
    two_strong_views_with_streams(policy, batch, &mut streams)
}

/// Augmentation settings as they appear in the training config. Jitter is
/// expressed as a multiple of the mean per-feature standard deviation of
/// the training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_jitter: f64,
    pub weak_scale: (f64, f64),
    pub strong_jitter: f64,
    pub strong_scale: (f64, f64),
    pub strong_dropout: f64,
    pub strong_rotation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_jitter: 0.05,
            weak_scale: (0.95, 1.05),
            strong_jitter: 0.25,
            strong_scale: (0.8, 1.2),
            strong_dropout: 0.1,
            strong_rotation: std::f64::consts::PI / 6.0,
        }
    }
}

impl AugmentConfig {
    /// Weak and strong policies for data with the given feature scale.
    pub fn policies(&self, feature_std: f64) -> Result<(AugmentPolicy, AugmentPolicy)> {
        let weak = AugmentPolicy {
            kind: AugmentKind::Weak,
            jitter_sigma: self.weak_jitter * feature_std,
            dropout_prob: 0.0,
            scale_range: self.weak_scale,
            rotation_max: 0.0,
        };
        let strong = AugmentPolicy {
            kind: AugmentKind::Strong,
            jitter_sigma: self.strong_jitter * feature_std,
            dropout_prob: self.strong_dropout,
            scale_range: self.strong_scale,
            rotation_max: self.strong_rotation,
        };
        weak.validate()?;
        strong.validate()?;
        Ok((weak, strong))
    }

    pub fn validate(&self) -> Result<()> {
        self.policies(1.0)?;
        let both_zero = self.weak_jitter == 0.0 && self.strong_jitter == 0.0;
        if !both_zero && self.weak_jitter >= self.strong_jitter {
            return Err(Error::config(
                "augment.weak_jitter",
                "weak jitter must be smaller than strong jitter",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::sq_dist;

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    fn strong() -> AugmentPolicy {
        AugmentConfig::default().policies(1.0).unwrap().1
    }

    #[test]
    fn identity_policy_is_identity() {
        let x = batch(6, 2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [AugmentKind::Weak, AugmentKind::Strong] {
            let p = AugmentPolicy::identity(kind);
            assert_eq!(apply(&p, &x, &mut rng).unwrap(), x);
            let (a, b) = two_strong_views(&p, &x, &mut rng).unwrap();
            assert_eq!(a, x);
            assert_eq!(b, x);
        }
    }

    #[test]
    fn distinct_streams_differ_and_replay_matches() {
        let x = batch(8, 3, 2);
        let p = strong();
        let a = apply(&p, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = apply(&p, &x, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a2 = apply(&p, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, a2);
        assert_eq!(a.shape(), x.shape());
    }

    #[test]
    fn views_are_reproducible_and_row_aligned() {
        let x = batch(5, 2, 3);
        let p = strong();
        let mut streams = row_streams(&mut ChaCha8Rng::seed_from_u64(7), 5);
        let mut permuted_streams: Vec<ChaCha8Rng> = streams.clone();
        let perm = [3, 0, 4, 1, 2];
        let px = x.select_rows(&perm);
        let permuted: Vec<ChaCha8Rng> = perm.iter().map(|&i| permuted_streams[i].clone()).collect();
        permuted_streams = permuted;

        let (v1, v2) = two_strong_views_with_streams(&p, &x, &mut streams).unwrap();
        let (p1, p2) = two_strong_views_with_streams(&p, &px, &mut permuted_streams).unwrap();
        assert_eq!(p1, v1.select_rows(&perm));
        assert_eq!(p2, v2.select_rows(&perm));
        assert_ne!(v1, v2);

        let again = two_strong_views(&p, &x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let again2 = two_strong_views(&p, &x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(again, again2);
    }

    #[test]
    fn weak_perturbs_less_than_strong() {
        let x = batch(1000, 2, 4);
        let (weak, strong) = AugmentConfig::default().policies(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean_shift = |m: &Matrix<f64>| {
            m.row_iter()
                .zip(x.row_iter())
                .map(|(a, b)| sq_dist(a, b).sqrt())
                .sum::<f64>()
                / 1000.0
        };
        let w = mean_shift(&apply(&weak, &x, &mut rng).unwrap());
        let s = mean_shift(&apply(&strong, &x, &mut rng).unwrap());
        // jitter alone: E|N(0, σ²I₂)| = σ√(π/2); strong σ is five times weak σ.
        assert!(w < 0.5 * s, "weak {w}, strong {s}");
    }

    #[test]
    fn invalid_policies_rejected() {
        let mut p = AugmentPolicy::identity(AugmentKind::Weak);
        p.dropout_prob = 0.1;
        assert!(p.validate().is_err());
        let mut p = AugmentPolicy::identity(AugmentKind::Strong);
        p.scale_range = (0.0, 1.0);
        assert!(p.validate().is_err());
        let cfg = AugmentConfig {
            weak_jitter: 0.3,
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
