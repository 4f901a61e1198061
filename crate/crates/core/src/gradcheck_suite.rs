//! Finite-difference check of the full training objective on a tiny
//! instance: 2-d inputs, encoder widths [2, 8, 4], 3 classes, B = 4, μ = 2.
//!
//! Augmented views, pseudo-labels, entropy selection and the kernel
//! bandwidth are frozen in a [`StepPlan`] so the loss is a smooth function
//! of the parameters while differencing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{generate_gaussian_mixture, GaussianMixtureSpec};
use crate::error::Result;
use crate::model::{Activation, Model};
use crate::numeric::gradcheck::{central_difference, relative_error};
use crate::numeric::{Matrix, Tape, Var};
use crate::trainer::{plan_step, record_loss, StepPlan, TrainConfig};

pub const TERMS: [&str; 4] = ["l_ssc", "l_mmd", "l_total", "embed"];

/// Deliberate corruption of an analytic gradient, to prove the check bites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    MmdSignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seeds: u64,
    pub tolerance: f64,
    pub step: f64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            tolerance: 1e-4,
            step: 1e-5,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermReport {
    pub name: &'static str,
    pub worst_error: f64,
    pub worst_param: String,
    pub worst_seed: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub terms: Vec<TermReport>,
    pub seeds: u64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.terms.iter().all(|t| t.passed)
    }

    pub fn failing_terms(&self) -> Vec<&'static str> {
        self.terms.iter().filter(|t| !t.passed).map(|t| t.name).collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "gradcheck: {} seeds, tolerance {:e}\n{:<8} {:>12}  {:<20} {:>5}  status\n",
            self.seeds, self.tolerance, "term", "worst_rel", "param", "seed"
        );
        for t in &self.terms {
            out.push_str(&format!(
                "{:<8} {:>12.3e}  {:<20} {:>5}  {}\n",
                t.name,
                t.worst_error,
                t.worst_param,
                t.worst_seed,
                if t.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Model, frozen plan and config of the tiny instance for `seed`.
pub fn tiny_instance(seed: u64) -> Result<(Model<f64>, StepPlan<f64>, TrainConfig)> {
    let spec = GaussianMixtureSpec {
        classes: 3,
        per_class: 8,
        dim: 2,
        separation: 3.0,
        distractor_classes: 0,
    };
    let ds = generate_gaussian_mixture::<f64>(seed, &spec)?;
    let cfg = TrainConfig {
        batch_size: 4,
        mu: 2,
        tau: 0.5,
        lambda_mmd: 1.0,
        // every prediction passes: entropy never exceeds ln K
        epsilon_p: Some(3f64.ln() * (1.0 + 1e-9)),
        seed,
        ..Default::default()
    };
    let model = Model::init(seed, &[2, 8, 4], 4, 3, Activation::Tanh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x_rows = [0, 8, 16, 1];
    let u_rows = [2, 3, 9, 10, 17, 18, 4, 11];
    let x = ds.features().select_rows(&x_rows);
    let y = x_rows.iter().map(|&r| ds.labels()[r]).collect();
    let u = ds.features().select_rows(&u_rows);
    let policies = cfg.augment.policies(1.0)?;
    let plan = plan_step(&model, x, y, &u, &cfg, &policies, &mut rng, &mut None)?;
    Ok((model, plan, cfg))
}

struct Values {
    terms: [f64; 4],
}

fn evaluate_terms(model: &Model<f64>, plan: &StepPlan<f64>, cfg: &TrainConfig, probe: &Matrix<f64>) -> Result<Values> {
    let mut tape = Tape::new();
    let g = record_loss(&mut tape, model, plan, cfg)?;
    let (embed, _) = embed_probe(&mut tape, model, plan, probe)?;
    let v = |var| tape.value(var).item();
    Ok(Values {
        terms: [v(g.l_ssc), v(g.l_mmd), v(g.l_total), v(embed)],
    })
}

/// `Σ probe ⊙ embed([x; u_weak])` recorded on `tape` with fresh parameter
/// leaves; returns the scalar node and the leaves.
fn embed_probe(
    tape: &mut Tape<f64>,
    model: &Model<f64>,
    plan: &StepPlan<f64>,
    probe: &Matrix<f64>,
) -> Result<(Var, Vec<Var>)> {
    let bound = model.bind(tape);
    let input = tape.constant(Matrix::vstack(&[&plan.x, &plan.u_weak])?);
    let z = bound.embed(tape, input)?;
    Ok((tape.weighted_sum(z, probe.clone())?, bound.params()))
}

fn analytic(
    model: &Model<f64>,
    plan: &StepPlan<f64>,
    cfg: &TrainConfig,
    probe: &Matrix<f64>,
    fault: Option<Fault>,
) -> Result<[Vec<Matrix<f64>>; 4]> {
    let mut tape = Tape::new();
    let g = record_loss(&mut tape, model, plan, cfg)?;
    let grads_of = |tape: &Tape<f64>, out, params: &[Var]| -> Result<Vec<Matrix<f64>>> {
        let grads = tape.backward(out)?;
        params.iter().map(|&p| grads.wrt(p, tape)).collect()
    };
    let ssc = grads_of(&tape, g.l_ssc, &g.params)?;
    let mut mmd = grads_of(&tape, g.l_mmd, &g.params)?;
    let mut total = grads_of(&tape, g.l_total, &g.params)?;
    if fault == Some(Fault::MmdSignFlip) {
        for (m, t) in mmd.iter_mut().zip(&mut total) {
            t.axpy(-2.0 * cfg.lambda_mmd, m)?;
            *m = m.scale(-1.0);
        }
    }
    let mut etape = Tape::new();
    let (embed, leaves) = embed_probe(&mut etape, model, plan, probe)?;
    let embed = grads_of(&etape, embed, &leaves)?;
    Ok([ssc, mmd, total, embed])
}

/// Runs the check over `opts.seeds` instances.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut terms: Vec<TermReport> = TERMS
        .iter()
        .map(|&name| TermReport {
            name,
            worst_error: 0.0,
            worst_param: String::new(),
            worst_seed: 0,
            passed: true,
        })
        .collect();
    for seed in 0..opts.seeds {
        let (model, plan, cfg) = tiny_instance(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let probe = Matrix::from_fn(plan.x.rows() + plan.u_weak.rows(), 4, |_, _| rng.random_range(-1.0..1.0));
        let exact = analytic(&model, &plan, &cfg, &probe, opts.fault)?;
        let names = model.param_names();
        for (pi, name) in names.iter().enumerate() {
            let base = model.params()[pi].clone();
            let mut numeric: Vec<Matrix<f64>> = Vec::with_capacity(4);
            for term in 0..4 {
                let mut perturbed = model.clone();
                numeric.push(central_difference(&base, opts.step, |m| {
                    *perturbed.params_mut()[pi] = m.clone();
                    evaluate_terms(&perturbed, &plan, &cfg, &probe)
                        .map(|v| v.terms[term])
                        .unwrap_or(f64::NAN)
                }));
            }
            for (term, report) in terms.iter_mut().enumerate() {
                let err = relative_error(&exact[term][pi], &numeric[term]);
                let err = if err.is_nan() { f64::INFINITY } else { err };
                if err > report.worst_error || report.worst_param.is_empty() {
                    report.worst_error = err;
                    report.worst_param = name.clone();
                    report.worst_seed = seed;
                }
            }
        }
    }
    for t in &mut terms {
        t.passed = t.worst_error < opts.tolerance;
    }
    Ok(GradcheckReport {
        terms,
        seeds: opts.seeds,
        tolerance: opts.tolerance,
    })
}
