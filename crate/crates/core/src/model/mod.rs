//! MLP encoder, unit-norm projection head and learnable class prototypes.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, Matrix, Tape, Var};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Weight `in × out` and bias `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Real> Layer<T> {
    fn he_init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(std * z)
        });
        Self {
            weight,
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn input_width(&self) -> usize {
        self.weight.rows()
    }

    fn output_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Hidden layers `widths[0] → … → widths[last]` followed by a linear
/// projection to the embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub hidden: Vec<Layer<T>>,
    pub projection: Layer<T>,
    pub activation: Activation,
}

impl<T: Real> EncoderParams<T> {
    pub fn input_width(&self) -> usize {
        self.hidden
            .first()
            .unwrap_or(&self.projection)
            .input_width()
    }

    /// Width of the representation fed to distribution matching.
    pub fn penultimate_width(&self) -> usize {
        self.projection.input_width()
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.output_width()
    }

    fn validate(&self) -> Result<()> {
        let mut width = self.input_width();
        for (i, l) in self.hidden.iter().chain(std::iter::once(&self.projection)).enumerate() {
            if l.input_width() != width || l.bias.shape() != (1, l.output_width()) {
                return Err(Error::config(
                    format!("encoder.layer[{i}]"),
                    format!("expected input width {width}, weight {:?}, bias {:?}", l.weight.shape(), l.bias.shape()),
                ));
            }
            if !l.weight.all_finite() || !l.bias.all_finite() {
                return Err(Error::NonFinite(format!("encoder layer {i}")));
            }
            width = l.output_width();
        }
        Ok(())
    }
}

/// One unit-norm row per class; row `k` carries label `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes<T> {
    pub vectors: Matrix<T>,
}

impl<T: Real> Prototypes<T> {
    pub fn class_count(&self) -> usize {
        self.vectors.rows()
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.class_count()).collect()
    }

    /// Rescales every row to unit norm.
    pub fn renormalize(&mut self) -> Result<()> {
        for r in 0..self.vectors.rows() {
            let v = crate::numeric::l2_normalize(self.vectors.row(r))?;
            self.vectors.row_mut(r).copy_from_slice(&v);
        }
        Ok(())
    }
}

/// Encoder plus prototypes: everything the optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub encoder: EncoderParams<T>,
    pub prototypes: Prototypes<T>,
}

/// Parameters recorded on a tape for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct BoundModel {
    hidden: Vec<(Var, Var)>,
    projection: (Var, Var),
    pub prototypes: Var,
    activation: Activation,
}

/// Penultimate representation and unit-norm embedding of a batch.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub penultimate: Var,
    pub embedding: Var,
}

impl<T: Real> Model<T> {
    /// He-initialised encoder over `widths` (input width first, then hidden
    /// widths) and `class_count` prototypes spread as far apart as the
    /// embedding dimension allows.
    pub fn init(
        seed: u64,
        widths: &[usize],
        embed_dim: usize,
        class_count: usize,
        activation: Activation,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::config("encoder.widths", "need an input width and non-zero layer widths"));
        }
        if embed_dim == 0 {
            return Err(Error::config("encoder.embed_dim", "must be positive"));
        }
        if class_count < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = widths
            .windows(2)
            .map(|w| Layer::he_init(w[0], w[1], &mut rng))
            .collect();
        let projection = Layer::he_init(*widths.last().unwrap(), embed_dim, &mut rng);
        let prototypes = init_prototypes(class_count, embed_dim, &mut rng)?;
        Ok(Self {
            encoder: EncoderParams {
                hidden,
                projection,
                activation,
            },
            prototypes,
        })
    }

    pub fn from_parts(encoder: EncoderParams<T>, prototypes: Prototypes<T>) -> Result<Self> {
        encoder.validate()?;
        if prototypes.vectors.cols() != encoder.embed_dim() {
            return Err(Error::Shape {
                op: "Model::from_parts",
                left: (encoder.penultimate_width(), encoder.embed_dim()),
                right: prototypes.vectors.shape(),
            });
        }
        Ok(Self { encoder, prototypes })
    }

    /// Parameters in a fixed order: hidden (weight, bias)…, projection
    /// weight, projection bias, prototypes.
    pub fn params(&self) -> Vec<&Matrix<T>> {
        let mut out = Vec::new();
        for l in &self.encoder.hidden {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.encoder.projection.weight);
        out.push(&self.encoder.projection.bias);
        out.push(&self.prototypes.vectors);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::new();
        for l in &mut self.encoder.hidden {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.encoder.projection.weight);
        out.push(&mut self.encoder.projection.bias);
        out.push(&mut self.prototypes.vectors);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.encoder.hidden.len() {
            out.push(format!("hidden{i}.weight"));
            out.push(format!("hidden{i}.bias"));
        }
        out.push("projection.weight".into());
        out.push("projection.bias".into());
        out.push("prototypes".into());
        out
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundModel {
        let hidden = self
            .encoder
            .hidden
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let p = &self.encoder.projection;
        let projection = (tape.param(p.weight.clone()), tape.param(p.bias.clone()));
        BoundModel {
            hidden,
            projection,
            prototypes: tape.param(self.prototypes.vectors.clone()),
            activation: self.encoder.activation,
        }
    }

    /// Embeddings of `batch` as plain values.
    pub fn embed_values(&self, batch: &Matrix<T>) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(batch.clone());
        let z = bound.embed(&mut tape, x)?;
        Ok(tape.value(z).clone())
    }
}

impl BoundModel {
    pub fn params(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.hidden {
            out.push(w);
            out.push(b);
        }
        out.push(self.projection.0);
        out.push(self.projection.1);
        out.push(self.prototypes);
        out
    }

    /// Output of the last hidden layer (the input itself when there are no
    /// hidden layers). Not normalised.
    pub fn penultimate<T: Real>(&self, tape: &mut Tape<T>, batch: Var) -> Result<Var> {
        let mut h = batch;
        for &(w, b) in &self.hidden {
            let z = tape.matmul(h, w)?;
            let z = tape.add_row_broadcast(z, b)?;
            h = match self.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::Tanh => tape.tanh(z)?,
            };
        }
        Ok(h)
    }

    fn project<T: Real>(&self, tape: &mut Tape<T>, penultimate: Var) -> Result<Var> {
        let z = tape.matmul(penultimate, self.projection.0)?;
        let z = tape.add_row_broadcast(z, self.projection.1)?;
        tape.l2_normalize_rows(z)
    }

    /// Unit-norm embeddings of `batch`.
    pub fn embed<T: Real>(&self, tape: &mut Tape<T>, batch: Var) -> Result<Var> {
        Ok(self.forward(tape, batch)?.embedding)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, batch: Var) -> Result<Forward> {
        let penultimate = self.penultimate(tape, batch)?;
        let embedding = self.project(tape, penultimate)?;
        Ok(Forward {
            penultimate,
            embedding,
        })
    }
}

fn init_prototypes<T: Real>(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Prototypes<T>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if dim >= k {
            // Gram-Schmidt against the rows accepted so far, twice for stability.
            for _ in 0..2 {
                for r in &rows {
                    let p = dot(&v, r);
                    v.iter_mut().zip(r).for_each(|(x, &y)| *x -= p * y);
                }
            }
        }
        let n = crate::numeric::norm(&v);
        if n > 1e-6 {
            rows.push(v.iter().map(|x| x / n).collect());
        }
    }
    let data = rows.into_iter().flatten().map(T::lit).collect();
    Ok(Prototypes {
        vectors: Matrix::new(k, dim, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{central_difference, relative_error};
    use crate::numeric::norm;

    fn random_batch(seed: u64, rows: usize, cols: usize) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn init_is_deterministic_and_prototypes_orthonormal() {
        let a = Model::<f64>::init(3, &[2, 8, 4], 6, 3, Activation::Relu).unwrap();
        let b = Model::<f64>::init(3, &[2, 8, 4], 6, 3, Activation::Relu).unwrap();
        assert_eq!(a, b);
        let p = &a.prototypes.vectors;
        for i in 0..3 {
            assert!((norm(p.row(i)) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(dot(p.row(i), p.row(j)).abs() <= 1e-9);
            }
        }
        // More classes than dimensions: still unit rows.
        let c = Model::<f64>::init(3, &[2], 2, 5, Activation::Tanh).unwrap();
        for r in c.prototypes.vectors.row_iter() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(Model::<f64>::init(0, &[], 4, 2, Activation::Relu).is_err());
        assert!(Model::<f64>::init(0, &[2, 0], 4, 2, Activation::Relu).is_err());
        assert!(Model::<f64>::init(0, &[2], 4, 1, Activation::Relu).is_err());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = Model::<f64>::init(1, &[3, 16, 8], 5, 2, Activation::Relu).unwrap();
        let z = m.embed_values(&random_batch(2, 40, 3)).unwrap();
        assert_eq!(z.shape(), (40, 5));
        for r in z.row_iter() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_identity_encoder_normalises_input() {
        let encoder = EncoderParams {
            hidden: vec![],
            projection: Layer {
                weight: Matrix::identity(3),
                bias: Matrix::zeros(1, 3),
            },
            activation: Activation::Relu,
        };
        let protos = Prototypes {
            vectors: Matrix::identity(3).select_rows(&[0, 1]),
        };
        let m = Model::from_parts(encoder, protos).unwrap();
        let x = random_batch(5, 10, 3);
        let z = m.embed_values(&x).unwrap();
        for (zr, xr) in z.row_iter().zip(x.row_iter()) {
            let expected = crate::numeric::l2_normalize(xr).unwrap();
            for (a, b) in zr.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn penultimate_of_single_layer_is_affine_plus_activation() {
        let m = Model::<f64>::init(4, &[2, 5], 3, 2, Activation::Tanh).unwrap();
        let x = random_batch(6, 7, 2);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let h = bound.penultimate(&mut tape, xv).unwrap();
        let l = &m.encoder.hidden[0];
        let expected = x.matmul(&l.weight).unwrap();
        let h = tape.value(h);
        assert_eq!(h.shape(), (7, 5));
        for r in 0..7 {
            for c in 0..5 {
                let e = (expected.get(r, c) + l.bias.get(0, c)).tanh();
                assert!((h.get(r, c) - e).abs() < 1e-15);
            }
        }
        // Pure: same inputs, same output.
        let mut tape2 = Tape::new();
        let b2 = m.bind(&mut tape2);
        let xv2 = tape2.constant(x);
        let h2 = b2.penultimate(&mut tape2, xv2).unwrap();
        assert_eq!(tape2.value(h2), h);
    }

    #[test]
    fn embed_gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let model = Model::<f64>::init(seed, &[3, 6, 5], 4, 3, Activation::Tanh).unwrap();
            let x = random_batch(100 + seed, 5, 3);
            let weights = random_batch(200 + seed, 5, 4);
            let objective = |m: &Model<f64>| -> (f64, Vec<Matrix<f64>>) {
                let mut tape = Tape::new();
                let bound = m.bind(&mut tape);
                let xv = tape.constant(x.clone());
                let z = bound.embed(&mut tape, xv).unwrap();
                let s = tape.weighted_sum(z, weights.clone()).unwrap();
                let g = tape.backward(s).unwrap();
                let grads = bound.params().iter().map(|&p| g.wrt(p, &tape).unwrap()).collect();
                (tape.value(s).item(), grads)
            };
            let (_, analytic) = objective(&model);
            for (k, a) in analytic.iter().enumerate() {
                let numeric = central_difference(model.params()[k], 1e-5, |probe| {
                    let mut m = model.clone();
                    *m.params_mut()[k] = probe.clone();
                    objective(&m).0
                });
                let err = relative_error(a, &numeric);
                assert!(err < 1e-5, "seed {seed} param {k}: {err:e}");
            }
        }
    }

    #[test]
    fn renormalize_restores_unit_rows() {
        let mut p = Prototypes {
            vectors: Matrix::from_rows(&[[3.0, 4.0], [0.0, -2.0]]).unwrap(),
        };
        p.renormalize().unwrap();
        for r in p.vectors.row_iter() {
            assert!((norm(r) - 1.0f64).abs() < 1e-12);
        }
    }
}
