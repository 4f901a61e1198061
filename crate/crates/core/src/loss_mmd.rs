//! Gaussian-kernel maximum mean discrepancy between labeled and unlabeled
//! penultimate features, restricted to rows whose class prediction has low
//! entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, entropy_unchecked, softmax, sq_dist, Matrix, Tape, Var};
use crate::scalar::Real;

/// Smallest bandwidth treated as usable.
pub const MIN_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    #[default]
    Median,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub bandwidth: BandwidthMode,
    /// Used in fixed mode.
    pub sigma: f64,
    /// Median mode only: when false the first usable median is kept for
    /// the rest of the run.
    pub recompute_each_step: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: BandwidthMode::Median,
            sigma: 1.0,
            recompute_each_step: true,
        }
    }
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            bandwidth: BandwidthMode::Fixed,
            sigma,
            recompute_each_step: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidth == BandwidthMode::Fixed && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("kernel.sigma", "must be positive in fixed mode"));
        }
        Ok(())
    }

    /// Bandwidth for the pooled rows, or `None` when it is degenerate.
    pub fn resolve<T: Real>(&self, pooled: &[&Matrix<T>]) -> Option<T> {
        match self.bandwidth {
            BandwidthMode::Fixed => Some(T::lit(self.sigma)),
            BandwidthMode::Median => median_bandwidth(pooled),
        }
    }
}

/// `exp(-‖a-b‖² / (2σ²))`.
pub fn gaussian_kernel<T: Real>(a: &[T], b: &[T], sigma: T) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "gaussian_kernel",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    if !(sigma > T::zero()) {
        return Err(Error::Domain("kernel bandwidth must be positive".into()));
    }
    Ok((-sq_dist(a, b) / (T::lit(2.0) * sigma * sigma)).exp())
}

/// Median Euclidean distance over distinct row pairs of the pooled rows.
pub fn median_bandwidth<T: Real>(pooled: &[&Matrix<T>]) -> Option<T> {
    let rows: Vec<&[T]> = pooled.iter().flat_map(|m| m.row_iter()).collect();
    if rows.len() < 2 {
        return None;
    }
    let mut d: Vec<T> = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    // selection on squared distances; sqrt is monotone
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("finite distances");
    let (mid, odd) = (d.len() / 2, d.len() % 2 == 1);
    let (lower, upper, _) = d.select_nth_unstable_by(mid, cmp);
    let upper = upper.sqrt();
    let median = if odd {
        upper
    } else {
        let below = lower.iter().copied().max_by(cmp).expect("at least one pair below");
        (below.sqrt() + upper) / T::lit(2.0)
    };
    (median > T::lit(MIN_SIGMA)).then_some(median)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdSelection<T> {
    pub selected_labeled: Vec<usize>,
    pub selected_unlabeled: Vec<usize>,
    pub epsilon_p: T,
    pub entropies_labeled: Vec<T>,
    pub entropies_unlabeled: Vec<T>,
}

impl<T> MmdSelection<T> {
    pub fn is_empty(&self) -> bool {
        self.selected_labeled.is_empty() || self.selected_unlabeled.is_empty()
    }
}

/// Entropy of `softmax(Z_c·z / t)` for every row; `t = None` means no
/// temperature.
pub fn prediction_entropies<T: Real>(prototypes: &Matrix<T>, z: &Matrix<T>, t: Option<T>) -> Result<Vec<T>> {
    if z.rows() > 0 && z.cols() != prototypes.cols() {
        return Err(Error::Shape {
            op: "prediction_entropies",
            left: prototypes.shape(),
            right: z.shape(),
        });
    }
    let scale = t.map_or(T::one(), |t| T::one() / t);
    z.row_iter()
        .map(|row| {
            let logits: Vec<T> = prototypes.row_iter().map(|p| dot(p, row) * scale).collect();
            Ok(entropy_unchecked(&softmax(&logits)?))
        })
        .collect()
}

/// Rows on each side whose prediction entropy is at most `epsilon_p`.
pub fn select_for_mmd<T: Real>(
    prototypes: &Matrix<T>,
    z_labeled: &Matrix<T>,
    z_unlabeled: &Matrix<T>,
    epsilon_p: T,
    temperature: Option<T>,
) -> Result<MmdSelection<T>> {
    if let Some(t) = temperature {
        if !(t > T::zero()) {
            return Err(Error::config("t_prime", "temperature must be positive"));
        }
    }
    let entropies_labeled = prediction_entropies(prototypes, z_labeled, temperature)?;
    let entropies_unlabeled = prediction_entropies(prototypes, z_unlabeled, temperature)?;
    let keep = |h: &[T]| -> Vec<usize> { (0..h.len()).filter(|&i| h[i] <= epsilon_p).collect() };
    Ok(MmdSelection {
        selected_labeled: keep(&entropies_labeled),
        selected_unlabeled: keep(&entropies_unlabeled),
        epsilon_p,
        entropies_labeled,
        entropies_unlabeled,
    })
}

/// Records the biased squared MMD between the rows of `f_l` and `f_u` with
/// bandwidth `sigma`. An empty side or `sigma = None` yields a constant 0.
pub fn l_mmd_with_sigma<T: Real>(tape: &mut Tape<T>, f_l: Var, f_u: Var, sigma: Option<T>) -> Result<Var> {
    let (m, dl) = tape.value(f_l).shape();
    let (n, du) = tape.value(f_u).shape();
    if m > 0 && n > 0 && dl != du {
        return Err(Error::Shape {
            op: "l_mmd",
            left: (m, dl),
            right: (n, du),
        });
    }
    let sigma = match sigma {
        Some(s) if m > 0 && n > 0 && s > T::lit(MIN_SIGMA) => s,
        _ => return Ok(tape.constant(Matrix::scalar(T::zero()))),
    };
    let pooled = tape.concat_rows(&[f_l, f_u])?;
    let d2 = tape.pairwise_sq_dist(pooled)?;
    let scaled = tape.scale(d2, -T::one() / (T::lit(2.0) * sigma * sigma))?;
    let k = tape.exp(scaled)?;
    let (mf, nf) = (T::from_count(m), T::from_count(n));
    let (ll, uu, lu) = (T::one() / (mf * mf), T::one() / (nf * nf), -T::one() / (mf * nf));
    let coeff = Matrix::from_fn(m + n, m + n, |i, j| match (i < m, j < m) {
        (true, true) => ll,
        (false, false) => uu,
        _ => lu,
    });
    tape.weighted_sum(k, coeff)
}

/// Loss node and the bandwidth it used.
#[derive(Debug, Clone, Copy)]
pub struct MmdTerm<T> {
    pub loss: Var,
    pub sigma: Option<T>,
}

/// Like [`l_mmd_with_sigma`], resolving the bandwidth from `kernel`. The
/// median bandwidth is computed from current values and carries no gradient.
pub fn l_mmd<T: Real>(tape: &mut Tape<T>, f_l: Var, f_u: Var, kernel: &KernelConfig) -> Result<MmdTerm<T>> {
    let sigma = kernel.resolve(&[tape.value(f_l), tape.value(f_u)]);
    let loss = l_mmd_with_sigma(tape, f_l, f_u, sigma)?;
    Ok(MmdTerm { loss, sigma })
}

/// Value-only MMD between two matrices.
pub fn mmd_value<T: Real>(a: &Matrix<T>, b: &Matrix<T>, kernel: &KernelConfig) -> Result<T> {
    kernel.validate()?;
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let term = l_mmd(&mut tape, va, vb, kernel)?;
    Ok(tape.value(term.loss).item())
}
