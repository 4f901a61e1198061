use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Distance between the means of neighbouring classes.
    pub separation: f64,
    #[serde(default)]
    pub distractor_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingsSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Standard deviation of the radial noise.
    pub noise: f64,
    #[serde(default)]
    pub distractor_classes: usize,
}

/// Isotropic unit-variance clusters whose means sit on a circle in the
/// first two coordinates, spaced so neighbouring means are `separation`
/// apart. Distractor clusters sit on the same circle between the real ones.
pub fn generate_gaussian_mixture<T: Real>(seed: u64, spec: &GaussianMixtureSpec) -> Result<Dataset<T>> {
    if spec.classes < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    if spec.per_class < 1 {
        return Err(Error::config("per_class", "need at least 1 sample per class"));
    }
    if spec.dim < 2 {
        return Err(Error::config("dim", "need at least 2 dimensions"));
    }
    if !(spec.separation > 0.0) || !spec.separation.is_finite() {
        return Err(Error::config("separation", "must be positive"));
    }
    let k = spec.classes;
    let radius = spec.separation / (2.0 * (PI / k as f64).sin());
    let step = 2.0 * PI / k as f64;
    let mut means: Vec<(f64, f64)> = (0..k)
        .map(|c| (radius * (c as f64 * step).cos(), radius * (c as f64 * step).sin()))
        .collect();
    for j in 0..spec.distractor_classes {
        let angle = (j as f64 + 0.5) * step;
        means.push((radius * angle.cos(), radius * angle.sin()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = means.len() * spec.per_class;
    let mut data = Vec::with_capacity(total * spec.dim);
    let mut labels = Vec::with_capacity(total);
    for (label, &(mx, my)) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            for d in 0..spec.dim {
                let noise: f64 = rng.sample(StandardNormal);
                let centre = match d {
                    0 => mx,
                    1 => my,
                    _ => 0.0,
                };
                data.push(T::lit(centre + noise));
            }
            labels.push(label);
        }
    }
    let features = Matrix::new(total, spec.dim, data)?;
    Dataset::new(
        format!("gmm-k{}-d{}-sep{}", k, spec.dim, spec.separation),
        features,
        labels,
        k,
        spec.distractor_classes,
    )
}

/// Concentric rings in 2D: class `c` has radius `c + 1`, uniform angle and
/// Gaussian radial noise. Distractor rings continue outward.
pub fn generate_rings<T: Real>(seed: u64, spec: &RingsSpec) -> Result<Dataset<T>> {
    if spec.classes < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    if spec.per_class < 1 {
        return Err(Error::config("per_class", "need at least 1 sample per class"));
    }
    if !(spec.noise >= 0.0) || !spec.noise.is_finite() {
        return Err(Error::config("noise", "must be non-negative"));
    }
    let rings = spec.classes + spec.distractor_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rings * spec.per_class * 2);
    let mut labels = Vec::with_capacity(rings * spec.per_class);
    for label in 0..rings {
        let radius = (label + 1) as f64;
        for _ in 0..spec.per_class {
            let angle = rng.random_range(0.0..2.0 * PI);
            let z: f64 = rng.sample(StandardNormal);
            let r = radius + spec.noise * z;
            data.push(T::lit(r * angle.cos()));
            data.push(T::lit(r * angle.sin()));
            labels.push(label);
        }
    }
    let features = Matrix::new(labels.len(), 2, data)?;
    Dataset::new(
        format!("rings-k{}-noise{}", spec.classes, spec.noise),
        features,
        labels,
        spec.classes,
        spec.distractor_classes,
    )
}
