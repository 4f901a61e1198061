//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its inputs. [`Tape::backward`] walks the nodes in reverse insertion
//! order, which is a valid topological order because inputs always precede
//! their consumers.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::matrix::{dot, Matrix};
use super::vector::EPS_NORM;
use crate::error::{Error, Result};
use crate::scalar::Real;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulTransB(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddRowBroadcast(usize, usize),
    SubColBroadcast(usize, usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    L2NormalizeRows(usize, Vec<T>),
    SoftmaxRows(usize),
    RowLogSumExp { input: usize, exclude_diagonal: bool },
    Sum(usize),
    WeightedSum(usize, Matrix<T>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    PairwiseSqDist(usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Records operations for reverse-mode gradients.
#[derive(Debug)]
pub struct Tape<T> {
    id: usize,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::UnreachableParameter);
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Matrix<T> {
        &self.nodes[i].value
    }

    /// Records a leaf whose gradient will be requested.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a leaf treated as data. Gradients still flow to it; the
    /// distinction is for readability at call sites.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        let i = self.idx(v).expect("var belongs to this tape");
        self.val(i)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).matmul(self.val(ib))?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    /// `a × bᵀ`.
    pub fn matmul_transpose_b(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).matmul_transpose_b(self.val(ib))?;
        Ok(self.push(out, Op::MatMulTransB(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).scale(s);
        Ok(self.push(out, Op::Scale(ia, s)))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(row)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Shape {
                op: "add_row_broadcast",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let out = Matrix::from_fn(av.rows(), av.cols(), |r, c| av.get(r, c) + bv.get(0, c));
        Ok(self.push(out, Op::AddRowBroadcast(ia, ib)))
    }

    /// Subtracts a `rows × 1` column from every column of `a`.
    pub fn sub_col_broadcast(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(col)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if bv.cols() != 1 || bv.rows() != av.rows() {
            return Err(Error::Shape {
                op: "sub_col_broadcast",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let out = Matrix::from_fn(av.rows(), av.cols(), |r, c| av.get(r, c) - bv.get(r, 0));
        Ok(self.push(out, Op::SubColBroadcast(ia, ib)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x.max(T::zero()));
        Ok(self.push(out, Op::Relu(ia)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(T::tanh);
        Ok(self.push(out, Op::Tanh(ia)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(T::exp);
        Ok(self.push(out, Op::Exp(ia)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        if v.data().iter().any(|&x| !(x > T::zero())) {
            return Err(Error::Domain("log of non-positive entry".into()));
        }
        let out = v.map(T::ln);
        Ok(self.push(out, Op::Log(ia)))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let mut norms = Vec::with_capacity(v.rows());
        let mut out = v.clone();
        for r in 0..v.rows() {
            let n = dot(v.row(r), v.row(r)).sqrt();
            if !(n > T::lit(EPS_NORM)) {
                return Err(Error::DegenerateVector {
                    norm: n.to_f64_lossy(),
                    eps: EPS_NORM,
                });
            }
            for x in out.row_mut(r) {
                *x = *x / n;
            }
            norms.push(n);
        }
        Ok(self.push(out, Op::L2NormalizeRows(ia, norms)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        if v.cols() == 0 {
            return Err(Error::Domain("softmax over zero columns".into()));
        }
        let mut out = v.clone();
        for r in 0..v.rows() {
            let p = super::vector::softmax(v.row(r))?;
            out.row_mut(r).copy_from_slice(&p);
        }
        Ok(self.push(out, Op::SoftmaxRows(ia)))
    }

    /// Per-row `ln Σ_j exp(a_ij)`, producing a column. With
    /// `exclude_diagonal`, entry `(i, i)` is left out of row `i`.
    pub fn row_log_sum_exp(&mut self, a: Var, exclude_diagonal: bool) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let min_cols = if exclude_diagonal { 2 } else { 1 };
        if v.cols() < min_cols || (exclude_diagonal && v.rows() > v.cols()) {
            return Err(Error::Domain(format!(
                "row_log_sum_exp on {:?} (exclude_diagonal={exclude_diagonal})",
                v.shape()
            )));
        }
        let out = Matrix::from_fn(v.rows(), 1, |r, _| {
            let row = v.row(r);
            super::vector::log_sum_exp(
                row.iter()
                    .enumerate()
                    .filter(|&(c, _)| !(exclude_diagonal && c == r))
                    .map(|(_, &x)| x),
            )
        });
        Ok(self.push(
            out,
            Op::RowLogSumExp {
                input: ia,
                exclude_diagonal,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = Matrix::scalar(self.val(ia).sum());
        Ok(self.push(out, Op::Sum(ia)))
    }

    /// `Σ_ij coeff_ij · a_ij` for a constant coefficient matrix.
    pub fn weighted_sum(&mut self, a: Var, coeff: Matrix<T>) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        if v.shape() != coeff.shape() {
            return Err(Error::Shape {
                op: "weighted_sum",
                left: v.shape(),
                right: coeff.shape(),
            });
        }
        let s = v
            .data()
            .iter()
            .zip(coeff.data())
            .fold(T::zero(), |acc, (&x, &c)| acc + x * c);
        Ok(self.push(Matrix::scalar(s), Op::WeightedSum(ia, coeff)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let mats: Vec<&Matrix<T>> = idx.iter().map(|&i| self.val(i)).collect();
        let out = Matrix::vstack(&mats)?;
        Ok(self.push(out, Op::ConcatRows(idx)))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        if let Some(&bad) = rows.iter().find(|&&r| r >= v.rows()) {
            return Err(Error::Domain(format!(
                "row index {bad} out of range for {} rows",
                v.rows()
            )));
        }
        let out = v.select_rows(rows);
        Ok(self.push(out, Op::GatherRows(ia, rows.to_vec())))
    }

    /// Matrix of squared Euclidean distances between all row pairs.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let n = v.rows();
        let out = Matrix::from_fn(n, n, |i, j| super::matrix::sq_dist(v.row(i), v.row(j)));
        Ok(self.push(out, Op::PairwiseSqDist(ia)))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.idx(output)?;
        if self.val(out).shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: self.val(out).shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; out + 1];
        grads[out] = Some(Matrix::scalar(T::one()));

        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_transpose_b(self.val(*b))?;
                let db = self.val(*a).transpose_matmul(g)?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::MatMulTransB(a, b) => {
                let da = g.matmul(self.val(*b))?;
                let db = g.transpose_matmul(self.val(*a))?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(self.val(*b), |g, y| g * y)?);
                accumulate(grads, *b, g.zip_map(self.val(*a), |g, x| g * x)?);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::AddRowBroadcast(a, b) => {
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, &x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                        *d = *d + x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, db);
            }
            Op::SubColBroadcast(a, b) => {
                let db = Matrix::from_fn(g.rows(), 1, |r, _| -g.row(r).iter().copied().sum::<T>());
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, db);
            }
            Op::Relu(a) => {
                let da = g.zip_map(self.val(*a), |g, x| if x > T::zero() { g } else { T::zero() })?;
                accumulate(grads, *a, da);
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(y, |g, t| g * (T::one() - t * t))?),
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(y, |g, e| g * e)?),
            Op::Log(a) => accumulate(grads, *a, g.zip_map(self.val(*a), |g, x| g / x)?),
            Op::L2NormalizeRows(a, norms) => {
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for (r, &n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let proj = dot(yr, gr);
                    for ((d, &yv), &gv) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) / n;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let proj = dot(yr, gr);
                    for ((d, &yv), &gv) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - proj);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::RowLogSumExp {
                input,
                exclude_diagonal,
            } => {
                let x = self.val(*input);
                let da = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                    if *exclude_diagonal && r == c {
                        T::zero()
                    } else {
                        g.get(r, 0) * (x.get(r, c) - y.get(r, 0)).exp()
                    }
                });
                accumulate(grads, *input, da);
            }
            Op::Sum(a) => {
                let (r, c) = self.val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::WeightedSum(a, coeff) => accumulate(grads, *a, coeff.scale(g.item())),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.val(p).rows();
                    let idx: Vec<usize> = (start..start + rows).collect();
                    accumulate(grads, p, g.select_rows(&idx));
                    start += rows;
                }
            }
            Op::GatherRows(a, rows) => {
                let src = self.val(*a);
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for (k, &r) in rows.iter().enumerate() {
                    for (d, &x) in da.row_mut(r).iter_mut().zip(g.row(k)) {
                        *d = *d + x;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::PairwiseSqDist(a) => {
                let x = self.val(*a);
                let n = x.rows();
                let two = T::lit(2.0);
                let mut da = Matrix::zeros(n, x.cols());
                for i in 0..n {
                    for j in 0..n {
                        let w = two * (g.get(i, j) + g.get(j, i));
                        if w == T::zero() || i == j {
                            continue;
                        }
                        let (xi, xj) = (x.row(i), x.row(j));
                        for (c, d) in da.row_mut(i).iter_mut().enumerate() {
                            *d = *d + w * (xi[c] - xj[c]);
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Matrix<T>>], i: usize, g: Matrix<T>) {
    match &mut grads[i] {
        Some(acc) => acc.axpy(T::one(), &g).expect("gradient shapes agree"),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: usize,
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var, tape: &Tape<T>) -> Result<Matrix<T>> {
        if v.tape != self.tape {
            return Err(Error::UnreachableParameter);
        }
        let i = tape.idx(v)?;
        Ok(match self.grads.get(i).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.val(i).shape();
                Matrix::zeros(r, c)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Checks the tape gradient of `f` at `x` against central differences.
    fn check(x: Matrix<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let p = tape.param(x.clone());
        let out = f(&mut tape, p).unwrap();
        let analytic = tape.backward(out).unwrap().wrt(p, &tape).unwrap();
        let numeric = central_difference(&x, 1e-5, |m| {
            let mut t = Tape::new();
            let v = t.constant(m.clone());
            let o = f(&mut t, v).unwrap();
            t.value(o).item()
        });
        relative_error(&analytic, &numeric)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
        let s = tape.sum(w).unwrap();
        let g = tape.backward(s).unwrap().wrt(w, &tape).unwrap();
        assert_eq!(g, Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn squared_norm_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap().wrt(w, &tape).unwrap();
        assert_eq!(g.data(), &[2.0, 4.0]);
    }

    #[test]
    fn foreign_variable_is_unreachable() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.param(Matrix::scalar(1.0));
        let y = b.param(Matrix::scalar(2.0));
        let g = b.backward(y).unwrap();
        assert!(matches!(g.wrt(x, &b), Err(Error::UnreachableParameter)));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::<f64>::filled(2, 3, 1.0));
        let y = tape.param(Matrix::scalar(2.0));
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap().wrt(x, &tape).unwrap();
        assert_eq!(g, Matrix::zeros(2, 3));
    }

    #[test]
    fn composite_matches_finite_differences_over_seeds() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(&mut rng, 4, 3);
            let x = random(&mut rng, 5, 4);
            let b = random(&mut rng, 1, 3);
            let err = check(w, |t, w| {
                let x = t.constant(x.clone());
                let b = t.constant(b.clone());
                let h = t.matmul(x, w)?;
                let h = t.add_row_broadcast(h, b)?;
                let h = t.tanh(h)?;
                let p = t.softmax_rows(h)?;
                let l = t.log(p)?;
                let e = t.exp(l)?;
                let m = t.mul(l, e)?;
                t.sum(m)
            });
            assert!(err < 1e-6, "seed {seed}: rel err {err:e}");
        }
    }

    #[test]
    fn each_primitive_matches_finite_differences() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = random(&mut rng, 4, 3);
            let other = random(&mut rng, 5, 3);
            let coeff = random(&mut rng, 4, 4);
            let coeff2 = random(&mut rng, 9, 9);
            let col = random(&mut rng, 4, 1);

            let checks: Vec<(&str, f64)> = vec![
                ("matmul_transpose_b", check(x.clone(), |t, v| {
                    let o = t.constant(other.clone());
                    let s = t.matmul_transpose_b(v, o)?;
                    let s2 = t.matmul_transpose_b(o, v)?;
                    let a = t.sum(s)?;
                    let sq = t.mul(s2, s2)?;
                    let b = t.sum(sq)?;
                    t.add(a, b)
                })),
                ("row_lse", check(x.clone(), |t, v| {
                    let s = t.matmul_transpose_b(v, v)?;
                    let l = t.row_log_sum_exp(s, true)?;
                    let d = t.sub_col_broadcast(s, l)?;
                    t.weighted_sum(d, coeff.clone())
                })),
                ("row_lse_full", check(x.clone(), |t, v| {
                    let l = t.row_log_sum_exp(v, false)?;
                    let sq = t.mul(l, l)?;
                    t.sum(sq)
                })),
                ("l2_normalize", check(x.clone(), |t, v| {
                    let n = t.l2_normalize_rows(v)?;
                    let o = t.constant(other.clone());
                    let s = t.matmul_transpose_b(n, o)?;
                    let sq = t.mul(s, s)?;
                    t.sum(sq)
                })),
                ("relu", check(x.clone(), |t, v| {
                    let r = t.relu(v)?;
                    let sq = t.mul(r, r)?;
                    t.sum(sq)
                })),
                ("pairwise", check(x.clone(), |t, v| {
                    let o = t.constant(other.clone());
                    let all = t.concat_rows(&[v, o])?;
                    let d = t.pairwise_sq_dist(all)?;
                    let d = t.scale(d, -0.5)?;
                    let k = t.exp(d)?;
                    t.weighted_sum(k, coeff2.clone())
                })),
                ("gather", check(x.clone(), |t, v| {
                    let g = t.gather_rows(v, &[2, 0, 2])?;
                    let sq = t.mul(g, g)?;
                    let s = t.sum(sq)?;
                    t.scale(s, 3.0)
                })),
                ("sub", check(x.clone(), |t, v| {
                    let c = t.constant(col.clone());
                    let d = t.sub_col_broadcast(v, c)?;
                    let e = t.sub(d, v)?;
                    let f = t.mul(e, d)?;
                    t.sum(f)
                })),
            ];
            for (name, err) in checks {
                assert!(err < 1e-6, "{name} seed {seed}: rel err {err:e}");
            }
        }
    }

    #[test]
    fn degenerate_row_is_rejected() {
        let mut t = Tape::new();
        let v = t.constant(Matrix::<f64>::zeros(1, 2));
        assert!(matches!(
            t.l2_normalize_rows(v),
            Err(Error::DegenerateVector { .. })
        ));
    }
}
