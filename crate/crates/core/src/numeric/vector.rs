//! Value-level reductions over plain slices.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Norms at or below this are treated as degenerate by [`l2_normalize`].
pub const EPS_NORM: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `ln Σ exp(v)`, stabilised by the maximum.
pub fn log_sum_exp<T: Real>(v: impl IntoIterator<Item = T> + Clone) -> T {
    let max = v.clone().into_iter().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = v.into_iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

pub fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

pub fn l2_normalize<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let n = norm(v);
    if !(n > T::lit(EPS_NORM)) {
        return Err(Error::DegenerateVector {
            norm: n.to_f64_lossy(),
            eps: EPS_NORM,
        });
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy<T: Real>(p: &[T]) -> Result<T> {
    if p.is_empty() {
        return Err(Error::Domain("entropy of empty distribution".into()));
    }
    let tol = T::lit(1e-9);
    if p.iter().any(|&x| !(x >= -tol && x <= T::one() + tol)) {
        return Err(Error::Domain("probabilities must lie in [0, 1]".into()));
    }
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > tol {
        return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked<T: Real>(p: &[T]) -> T {
    p.iter()
        .filter(|&&x| x > T::zero())
        .fold(T::zero(), |acc, &x| acc - x * x.ln())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
