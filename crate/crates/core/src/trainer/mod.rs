//! Total objective, SGD with momentum under a cosine schedule, and the
//! training loop.

mod config;
mod run;

pub use config::{DataConfig, DataSource, EncoderConfig, LrSchedule, TrainConfig};
pub use run::{load_run_model, train, RunOptions, TrainOutcome, METRICS_HEADER};

use rand_chacha::ChaCha8Rng;

use crate::augment::{apply_with_streams, row_streams, two_strong_views_with_streams, AugmentPolicy};
use crate::error::{Error, Result};
use crate::loss_mmd::{l_mmd_with_sigma, median_bandwidth, select_for_mmd, BandwidthMode, MmdSelection};
use crate::loss_ssc::{l_ssc, SscTargets};
use crate::model::Model;
use crate::numeric::{argmax, dot, Matrix, Tape, Var};
use crate::pseudo_label::{assign, PseudoLabelAssignment};
use crate::scalar::Real;

/// `η₀ · cos(7πt / 16T)` for `0 ≤ t ≤ T`.
pub fn lr_at(eta0: f64, t: f64, total: f64) -> Result<f64> {
    if !(total >= 1.0) {
        return Err(Error::Domain(format!("total epochs {total} must be at least 1")));
    }
    if !(0.0..=total).contains(&t) {
        return Err(Error::Domain(format!("epoch {t} outside [0, {total}]")));
    }
    Ok(eta0 * (7.0 * std::f64::consts::PI * t / (16.0 * total)).cos())
}

/// Momentum buffers plus progress counters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Matrix<T>>,
    pub step: u64,
    pub epoch: u64,
    /// Kernel bandwidth kept fixed after first use when the median is not
    /// recomputed every step.
    pub frozen_sigma: Option<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self {
            velocity: model
                .params()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
            step: 0,
            epoch: 0,
            frozen_sigma: None,
        }
    }

    /// `v ← m·v + g; θ ← θ − lr·v`, then prototypes back to unit norm.
    pub fn apply(
        &mut self,
        model: &mut Model<T>,
        grads: &[Matrix<T>],
        lr: T,
        momentum: T,
        clip: Option<T>,
    ) -> Result<()> {
        let mut params = model.params_mut();
        if grads.len() != params.len() || self.velocity.len() != params.len() {
            return Err(Error::Shape {
                op: "OptimizerState::apply",
                left: (params.len(), self.velocity.len()),
                right: (grads.len(), 1),
            });
        }
        let scale = match clip {
            Some(c) => {
                let norm = grads
                    .iter()
                    .map(|g| g.data().iter().map(|&x| x * x).sum::<T>())
                    .sum::<T>()
                    .sqrt();
                if norm > c { c / norm } else { T::one() }
            }
            None => T::one(),
        };
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            if g.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "OptimizerState::apply",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vi = momentum * *vi + gi * scale;
                *pi = *pi - lr * *vi;
            }
        }
        drop(params);
        model.prototypes.renormalize()?;
        self.step += 1;
        Ok(())
    }
}

/// Loss values and diagnostics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_ssc: f64,
    pub l_mmd: f64,
    pub l_total: f64,
    pub n_confident: usize,
    pub n_mmd_selected_l: usize,
    pub n_mmd_selected_u: usize,
    pub sigma: Option<f64>,
    pub lr: f64,
    /// The contrastive batch had no positive pair; parameters unchanged.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdPlan<T> {
    pub selection: MmdSelection<T>,
    pub sigma: Option<T>,
}

/// Every discrete or random decision of a step, fixed before the loss is
/// recorded: augmented views, pseudo-labels, entropy selection and kernel
/// bandwidth. The loss is a smooth function of the parameters given a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan<T> {
    pub x: Matrix<T>,
    pub y_x: Vec<usize>,
    pub u_weak: Matrix<T>,
    pub u_strong1: Matrix<T>,
    pub u_strong2: Matrix<T>,
    pub assignments: Vec<PseudoLabelAssignment<T>>,
    /// Absent when distribution matching is switched off.
    pub mmd: Option<MmdPlan<T>>,
}

/// Penultimate values and embeddings of `batch`.
pub fn forward_values<T: Real>(model: &Model<T>, batch: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x = tape.constant(batch.clone());
    let f = bound.forward(&mut tape, x)?;
    Ok((tape.value(f.penultimate).clone(), tape.value(f.embedding).clone()))
}

/// Augments `u` and makes the step's discrete decisions with the current
/// parameters.
#[allow(clippy::too_many_arguments)]
pub fn plan_step<T: Real>(
    model: &Model<T>,
    x: Matrix<T>,
    y_x: Vec<usize>,
    u: &Matrix<T>,
    cfg: &TrainConfig,
    policies: &(AugmentPolicy, AugmentPolicy),
    rng: &mut ChaCha8Rng,
    frozen_sigma: &mut Option<T>,
) -> Result<StepPlan<T>> {
    let (weak, strong) = policies;
    let mut weak_streams = row_streams(rng, u.rows());
    let mut strong_streams = row_streams(rng, u.rows());
    let u_weak = apply_with_streams(weak, u, &mut weak_streams)?;
    let (u_strong1, u_strong2) = two_strong_views_with_streams(strong, u, &mut strong_streams)?;

    let protos = &model.prototypes.vectors;
    let (pen_w, z_w) = forward_values(model, &u_weak)?;
    let assignments = assign(
        protos,
        &z_w,
        T::lit(cfg.t_prime),
        T::lit(cfg.tau),
        &cfg.lambda_weights,
    )?;

    let mmd = if cfg.lambda_mmd > 0.0 {
        let (pen_x, z_x) = forward_values(model, &x)?;
        let eps = T::lit(cfg.epsilon_p_for(protos.rows()));
        let t = cfg.selection_uses_t_prime.then(|| T::lit(cfg.t_prime));
        let selection = select_for_mmd(protos, &z_x, &z_w, eps, t)?;
        let sigma = match cfg.kernel.bandwidth {
            BandwidthMode::Fixed => Some(T::lit(cfg.kernel.sigma)),
            BandwidthMode::Median => match frozen_sigma {
                Some(s) if !cfg.kernel.recompute_each_step => Some(*s),
                _ => {
                    let f_l = pen_x.select_rows(&selection.selected_labeled);
                    let f_u = pen_w.select_rows(&selection.selected_unlabeled);
                    let s = if selection.is_empty() {
                        None
                    } else {
                        median_bandwidth(&[&f_l, &f_u])
                    };
                    if !cfg.kernel.recompute_each_step && s.is_some() {
                        *frozen_sigma = s;
                    }
                    s
                }
            },
        };
        Some(MmdPlan { selection, sigma })
    } else {
        None
    };

    Ok(StepPlan {
        x,
        y_x,
        u_weak,
        u_strong1,
        u_strong2,
        assignments,
        mmd,
    })
}

/// Loss nodes recorded for one plan.
#[derive(Debug, Clone)]
pub struct LossGraph {
    pub params: Vec<Var>,
    pub l_ssc: Var,
    pub l_mmd: Var,
    pub l_total: Var,
}

/// Records the objective for `plan` on `tape` with the model's parameters
/// as leaves.
pub fn record_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    plan: &StepPlan<T>,
    cfg: &TrainConfig,
) -> Result<LossGraph> {
    let bound = model.bind(tape);
    let x = tape.constant(plan.x.clone());
    let fx = bound.forward(tape, x)?;
    let s1 = tape.constant(plan.u_strong1.clone());
    let z_s1 = bound.embed(tape, s1)?;
    let s2 = tape.constant(plan.u_strong2.clone());
    let z_s2 = bound.embed(tape, s2)?;
    let z = tape.concat_rows(&[fx.embedding, z_s1, z_s2, bound.prototypes])?;
    let k = model.prototypes.class_count();
    let targets = SscTargets::build(&plan.y_x, &plan.assignments, k, &cfg.lambda_weights);
    let ssc = l_ssc(
        tape,
        z,
        &targets,
        T::lit(cfg.temperature),
        cfg.temperature_form,
    )?;

    let (mmd, total) = match &plan.mmd {
        Some(p) => {
            let w = tape.constant(plan.u_weak.clone());
            let pen_w = bound.penultimate(tape, w)?;
            let f_l = tape.gather_rows(fx.penultimate, &p.selection.selected_labeled)?;
            let f_u = tape.gather_rows(pen_w, &p.selection.selected_unlabeled)?;
            let mmd = l_mmd_with_sigma(tape, f_l, f_u, p.sigma)?;
            let weighted = tape.scale(mmd, T::lit(cfg.lambda_mmd))?;
            (mmd, tape.add(ssc, weighted)?)
        }
        None => (tape.constant(Matrix::scalar(T::zero())), ssc),
    };
    Ok(LossGraph {
        params: bound.params(),
        l_ssc: ssc,
        l_mmd: mmd,
        l_total: total,
    })
}

/// One optimizer step on the plan's batch.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    opt: &mut OptimizerState<T>,
    plan: &StepPlan<T>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<LossBreakdown> {
    let confident = plan.assignments.iter().filter(|a| a.confident).count();
    let (n_l, n_u, sigma) = plan.mmd.as_ref().map_or((0, 0, None), |p| {
        (
            p.selection.selected_labeled.len(),
            p.selection.selected_unlabeled.len(),
            p.sigma.map(|s| s.to_f64_lossy()),
        )
    });
    let mut breakdown = LossBreakdown {
        n_confident: confident,
        n_mmd_selected_l: n_l,
        n_mmd_selected_u: n_u,
        sigma,
        lr,
        ..Default::default()
    };
    let mut tape = Tape::new();
    let graph = match record_loss(&mut tape, model, plan, cfg) {
        Ok(g) => g,
        Err(Error::EmptyPositives) => {
            log::warn!("step {}: no positive pairs in contrastive batch, skipped", opt.step);
            breakdown.skipped = true;
            return Ok(breakdown);
        }
        Err(e) => return Err(e),
    };
    breakdown.l_ssc = tape.value(graph.l_ssc).item().to_f64_lossy();
    breakdown.l_mmd = tape.value(graph.l_mmd).item().to_f64_lossy();
    breakdown.l_total = tape.value(graph.l_total).item().to_f64_lossy();
    if !breakdown.l_total.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {}", opt.step)));
    }
    let grads = tape.backward(graph.l_total)?;
    let grads = graph
        .params
        .iter()
        .map(|&p| grads.wrt(p, &tape))
        .collect::<Result<Vec<_>>>()?;
    opt.apply(
        model,
        &grads,
        T::lit(lr),
        T::lit(cfg.momentum),
        cfg.grad_clip.map(T::lit),
    )?;
    Ok(breakdown)
}

/// Class of each row by highest prototype similarity.
pub fn predict<T: Real>(model: &Model<T>, features: &Matrix<T>) -> Result<Vec<usize>> {
    let z = model.embed_values(features)?;
    Ok(z.row_iter()
        .map(|row| {
            let sims: Vec<T> = model.prototypes.vectors.row_iter().map(|p| dot(p, row)).collect();
            argmax(&sims)
        })
        .collect())
}

/// Fraction of rows whose predicted class matches `labels`.
pub fn evaluate<T: Real>(model: &Model<T>, features: &Matrix<T>, labels: &[usize]) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::Domain("evaluation set is empty".into()));
    }
    if labels.len() != features.rows() {
        return Err(Error::Shape {
            op: "evaluate",
            left: features.shape(),
            right: (labels.len(), 1),
        });
    }
    let pred = predict(model, features)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentConfig, AugmentKind};
    use crate::data::{generate_gaussian_mixture, GaussianMixtureSpec};
    use crate::model::{Activation, EncoderParams, Layer, Prototypes};
    use rand::SeedableRng;

    #[test]
    fn schedule_values() {
        assert_eq!(lr_at(0.03, 0.0, 256.0).unwrap(), 0.03);
        assert!((lr_at(0.03, 256.0, 256.0).unwrap() - 0.005_852_709_660_483_85).abs() < 1e-12);
        assert!((lr_at(0.03, 0.5, 1.0).unwrap() - 0.023_190_313_600_882_11).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for t in 0..=256 {
            let v = lr_at(0.03, t as f64, 256.0).unwrap();
            assert!(v < prev && v > 0.0);
            prev = v;
        }
        assert!(lr_at(0.03, 257.0, 256.0).is_err());
        assert!(lr_at(0.03, -1.0, 256.0).is_err());
        assert!(lr_at(0.03, 0.0, 0.0).is_err());
    }

    fn tiny_model() -> Model<f64> {
        Model::init(3, &[2, 4], 3, 2, Activation::Tanh).unwrap()
    }

    #[test]
    fn plain_sgd_step_is_lr_times_gradient() {
        let mut model = tiny_model();
        let before = model.clone();
        let mut opt = OptimizerState::new(&model);
        let grads: Vec<Matrix<f64>> = model
            .params()
            .iter()
            .map(|p| Matrix::filled(p.rows(), p.cols(), 0.5))
            .collect();
        opt.apply(&mut model, &grads, 0.1, 0.0, None).unwrap();
        let after = model.params();
        // every encoder parameter moved by exactly lr·g
        for (a, b) in after.iter().zip(before.params()).take(after.len() - 1) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((y - x - 0.05).abs() < 1e-15);
            }
        }
        assert_eq!(opt.step, 1);

        // momentum accumulates: second identical step moves by lr·(m·g + g)
        let mut model2 = tiny_model();
        let mut opt2 = OptimizerState::new(&model2);
        opt2.apply(&mut model2, &grads, 0.1, 0.9, None).unwrap();
        let mid = model2.params()[0].clone();
        opt2.apply(&mut model2, &grads, 0.1, 0.9, None).unwrap();
        let moved = mid.get(0, 0) - model2.params()[0].get(0, 0);
        assert!((moved - 0.1 * 0.5 * 1.9).abs() < 1e-15);
        for r in model2.prototypes.vectors.row_iter() {
            assert!((crate::numeric::norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_clipping_caps_the_norm() {
        let mut model = tiny_model();
        let before = model.params()[0].clone();
        let mut opt = OptimizerState::new(&model);
        let grads: Vec<Matrix<f64>> = model
            .params()
            .iter()
            .map(|p| Matrix::filled(p.rows(), p.cols(), 100.0))
            .collect();
        opt.apply(&mut model, &grads, 1.0, 0.0, Some(1.0)).unwrap();
        let step = before.zip_map(model.params()[0], |a, b| a - b).unwrap();
        assert!(step.frobenius_norm() <= 1.0 + 1e-12);
    }

    fn setup(lambda_mmd: f64) -> (Model<f64>, TrainConfig, Matrix<f64>, Vec<usize>, Matrix<f64>) {
        let ds = generate_gaussian_mixture::<f64>(
            1,
            &GaussianMixtureSpec {
                classes: 3,
                per_class: 10,
                dim: 2,
                separation: 4.0,
                distractor_classes: 0,
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            mu: 2,
            lambda_mmd,
            tau: 0.5,
            ..Default::default()
        };
        let x = ds.features().select_rows(&[0, 10, 20, 1]);
        let u = ds.features().select_rows(&[2, 3, 12, 13, 22, 23, 4, 14]);
        let model = Model::init(5, &[2, 8, 4], 4, 3, Activation::Tanh).unwrap();
        (model, cfg, x, vec![0, 1, 2, 0], u)
    }

    fn run_steps(lambda_mmd: f64, steps: usize) -> Vec<LossBreakdown> {
        let (mut model, cfg, x, y, u) = setup(lambda_mmd);
        let policies = cfg.augment.policies(1.0).unwrap();
        let mut opt = OptimizerState::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut frozen = None;
        (0..steps)
            .map(|_| {
                let plan = plan_step(&model, x.clone(), y.clone(), &u, &cfg, &policies, &mut rng, &mut frozen).unwrap();
                train_step(&mut model, &mut opt, &plan, &cfg, 0.03).unwrap()
            })
            .collect()
    }

    #[test]
    fn total_is_ssc_plus_weighted_mmd() {
        for b in run_steps(1.0, 5) {
            assert!((b.l_total - (b.l_ssc + b.l_mmd)).abs() < 1e-12);
            assert!(b.l_mmd >= -1e-12);
        }
        for b in run_steps(0.0, 5) {
            assert_eq!(b.l_mmd, 0.0);
            assert_eq!(b.l_total, b.l_ssc);
            assert_eq!((b.n_mmd_selected_l, b.n_mmd_selected_u, b.sigma), (0, 0, None));
        }
    }

    #[test]
    fn identical_seeds_give_identical_steps() {
        let a = run_steps(1.0, 4);
        let b = run_steps(1.0, 4);
        assert_eq!(a, b);
    }

    #[test]
    fn plan_holds_three_views_and_labels() {
        let (model, cfg, x, y, u) = setup(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policies = (
            AugmentConfig::default().policies(1.0).unwrap().0,
            crate::augment::AugmentPolicy::identity(AugmentKind::Strong),
        );
        let plan = plan_step(&model, x, y, &u, &cfg, &policies, &mut rng, &mut None).unwrap();
        assert_eq!(plan.u_strong1, u);
        assert_eq!(plan.u_strong2, u);
        assert_ne!(plan.u_weak, u);
        assert_eq!(plan.assignments.len(), 8);
        for (i, a) in plan.assignments.iter().enumerate() {
            assert!(a.confident || a.label == 3 + i);
        }
    }

    #[test]
    fn evaluation_with_prototypes_at_class_means() {
        let spec = GaussianMixtureSpec {
            classes: 4,
            per_class: 250,
            dim: 2,
            separation: 8.0,
            distractor_classes: 0,
        };
        let ds = generate_gaussian_mixture::<f64>(2, &spec).unwrap();
        // identity encoder: no hidden layers, identity projection
        let encoder = EncoderParams {
            hidden: vec![],
            projection: Layer {
                weight: Matrix::identity(2),
                bias: Matrix::zeros(1, 2),
            },
            activation: Activation::Relu,
        };
        let mut means = Matrix::zeros(4, 2);
        for (r, &y) in ds.labels().iter().enumerate() {
            for c in 0..2 {
                means.set(y, c, means.get(y, c) + ds.features().get(r, c) / 250.0);
            }
        }
        let mut prototypes = Prototypes { vectors: means };
        prototypes.renormalize().unwrap();
        let model = Model::from_parts(encoder, prototypes).unwrap();
        let acc = evaluate(&model, ds.features(), ds.labels()).unwrap();
        assert!(acc >= 0.99, "{acc}");
        assert_eq!(evaluate(&model, &Matrix::zeros(0, 2), &[]).unwrap_err().to_string(), "domain error: evaluation set is empty");

        let memorised = predict(&model, ds.features()).unwrap();
        assert_eq!(evaluate(&model, ds.features(), &memorised).unwrap(), 1.0);
    }

    #[test]
    fn random_prototypes_are_near_chance() {
        let spec = GaussianMixtureSpec {
            classes: 2,
            per_class: 500,
            dim: 2,
            separation: 3.0,
            distractor_classes: 0,
        };
        let mut total = 0.0;
        for seed in 0..20 {
            let ds = generate_gaussian_mixture::<f64>(seed, &spec).unwrap();
            let model = Model::init(100 + seed, &[2, 16], 8, 2, Activation::Relu).unwrap();
            total += evaluate(&model, ds.features(), ds.labels()).unwrap();
        }
        let mean = total / 20.0;
        assert!((mean - 0.5).abs() < 0.1, "{mean}");
    }
}
