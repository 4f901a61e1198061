use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, lr_at, plan_step, train_step, LossBreakdown, LrSchedule, OptimizerState, TrainConfig};
use crate::data::{mean_column_std, TrainingData};
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, Model};
use crate::numeric::Matrix;
use crate::scalar::Real;

pub const METRICS_HEADER: &str =
    "kind,step,epoch,lr,l_ssc,l_mmd,l_total,n_confident,n_mmd_selected_l,n_mmd_selected_u,sigma,test_accuracy";

const MODEL_STREAM: u64 = 1;
const EPOCH_STREAM_BASE: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Directory for `config.json`, `metrics.csv`, `checkpoint.bin`.
    pub run_dir: Option<PathBuf>,
    /// Continue from `checkpoint.bin` in `run_dir` when present.
    pub resume: bool,
    /// Stop after this many completed epochs (a checkpoint is written).
    pub halt_after_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    /// Steps run in this invocation.
    pub steps: Vec<LossBreakdown>,
    /// Test accuracy after each epoch run in this invocation.
    pub epoch_accuracy: Vec<f64>,
    pub epochs_completed: usize,
    pub final_accuracy: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: u64,
    step: u64,
    params: Vec<(String, usize, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    epochs: usize,
    steps: u64,
    final_test_accuracy: Option<f64>,
}

/// Draws indices from a shuffled order, reshuffling whenever it runs out.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn step_row(step: usize, epoch: usize, b: &LossBreakdown) -> String {
    format!(
        "step,{step},{epoch},{},{},{},{},{},{},{},{},",
        b.lr,
        b.l_ssc,
        b.l_mmd,
        b.l_total,
        b.n_confident,
        b.n_mmd_selected_l,
        b.n_mmd_selected_u,
        opt_field(b.sigma)
    )
}

fn epoch_row(step: usize, epoch: usize, accuracy: Option<f64>) -> String {
    format!("epoch,{step},{epoch},,,,,,,,,{}", opt_field(accuracy))
}

fn load_model_state<T: Real>(model: &mut Model<T>, opt: &mut OptimizerState<T>, ckpt: &Checkpoint) -> Result<()> {
    let n = opt.velocity.len();
    if ckpt.tensors.len() != 2 * n {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            2 * n,
            ckpt.tensors.len()
        )));
    }
    for (i, (p, src)) in model.params_mut().into_iter().zip(&ckpt.tensors[..n]).enumerate() {
        if p.shape() != src.shape() {
            return Err(Error::Checkpoint(format!("tensor {i}: shape {:?} vs {:?}", src.shape(), p.shape())));
        }
        *p = src.cast();
    }
    for (v, src) in opt.velocity.iter_mut().zip(&ckpt.tensors[n..]) {
        if v.shape() != src.shape() {
            return Err(Error::Checkpoint("velocity shape mismatch".into()));
        }
        *v = src.cast();
    }
    opt.epoch = ckpt.epoch;
    opt.step = ckpt.step;
    opt.frozen_sigma = ckpt.frozen_sigma.map(T::lit);
    Ok(())
}

fn save_state<T: Real>(dir: &Path, model: &Model<T>, opt: &OptimizerState<T>) -> Result<()> {
    let mut tensors: Vec<Matrix<f64>> = model.params().iter().map(|p| p.cast()).collect();
    tensors.extend(opt.velocity.iter().map(|v| v.cast()));
    let ckpt = Checkpoint {
        epoch: opt.epoch,
        step: opt.step,
        frozen_sigma: opt.frozen_sigma.map(|s| s.to_f64_lossy()),
        tensors,
    };
    write_checkpoint(dir.join("checkpoint.bin"), &ckpt)?;
    let meta = CheckpointMeta {
        epoch: opt.epoch,
        step: opt.step,
        params: model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(n, p)| (n, p.rows(), p.cols()))
            .collect(),
    };
    let path = dir.join("checkpoint.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

/// Model stored in `dir/checkpoint.bin`, shaped by `cfg` for inputs of
/// width `input_dim` and `class_count` classes. Also returns the epoch.
pub fn load_run_model(dir: &Path, cfg: &TrainConfig, input_dim: usize, class_count: usize) -> Result<(Model<f64>, u64)> {
    let mut widths = vec![input_dim];
    widths.extend(&cfg.encoder.hidden);
    let mut model = Model::init(0, &widths, cfg.encoder.embed_dim, class_count, cfg.encoder.activation)?;
    let mut opt = OptimizerState::new(&model);
    load_model_state(&mut model, &mut opt, &read_checkpoint(dir.join("checkpoint.bin"))?)?;
    Ok((model, opt.epoch))
}

/// Keeps the header and the rows of epochs before `epochs_done`.
fn truncate_metrics(path: &Path, epochs_done: u64) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .nth(2)
                .and_then(|e| e.parse::<u64>().ok())
                .is_some_and(|e| e < epochs_done);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn check_resume_config(dir: &Path, cfg: &TrainConfig) -> Result<()> {
    let path = dir.join("config.json");
    let stored = TrainConfig::from_json_file(&path)?;
    if &stored != cfg {
        return Err(Error::config(
            "resume",
            format!("{} differs from the requested config", path.display()),
        ));
    }
    Ok(())
}

/// Trains on `data` per `cfg`, optionally persisting a run directory.
pub fn train<T: Real>(cfg: &TrainConfig, data: &TrainingData<T>, opts: &RunOptions) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (labeled, unlabeled) = (&data.labeled, &data.unlabeled);
    if labeled.features.rows() == 0 || unlabeled.features.rows() == 0 {
        return Err(Error::config("data", "labeled and unlabeled pools must be non-empty"));
    }
    let mut widths = vec![labeled.features.cols()];
    widths.extend(&cfg.encoder.hidden);
    let mut model = Model::init(
        stream_rng(cfg.seed, MODEL_STREAM).next_u64(),
        &widths,
        cfg.encoder.embed_dim,
        data.class_count,
        cfg.encoder.activation,
    )?;
    let mut opt = OptimizerState::new(&model);
    let pool = Matrix::vstack(&[&labeled.features, &unlabeled.features])?;
    let policies = cfg.augment.policies(mean_column_std(&pool).to_f64_lossy())?;

    let metrics_path = opts.run_dir.as_ref().map(|d| d.join("metrics.csv"));
    if let Some(dir) = &opts.run_dir {
        let ckpt_path = dir.join("checkpoint.bin");
        if opts.resume && ckpt_path.exists() {
            check_resume_config(dir, cfg)?;
            load_model_state(&mut model, &mut opt, &read_checkpoint(&ckpt_path)?)?;
            truncate_metrics(metrics_path.as_ref().unwrap(), opt.epoch)?;
            log::info!("resuming {} at epoch {}", dir.display(), opt.epoch);
        } else {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.json");
            fs::write(&cfg_path, cfg.to_json_pretty() + "\n").map_err(|e| Error::io(&cfg_path, e))?;
            let p = metrics_path.as_ref().unwrap();
            fs::write(p, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(p, e))?;
        }
    }
    let mut metrics = match &metrics_path {
        Some(p) => Some(BufWriter::new(
            OpenOptions::new().append(true).open(p).map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    let emit = |line: String, metrics: &mut Option<BufWriter<File>>| -> Result<()> {
        if let Some(w) = metrics {
            writeln!(w, "{line}").map_err(|e| Error::io(metrics_path.as_ref().unwrap(), e))?;
        }
        Ok(())
    };

    let n_u = unlabeled.features.rows();
    let steps_per_epoch = n_u.div_ceil(cfg.unlabeled_batch());
    let mut outcome_steps = Vec::new();
    let mut epoch_accuracy = Vec::new();
    let mut final_accuracy = None;

    while (opt.epoch as usize) < cfg.epochs {
        let epoch = opt.epoch as usize;
        let mut rng = stream_rng(cfg.seed, EPOCH_STREAM_BASE + epoch as u64);
        let mut lab = Cycler::new(labeled.features.rows(), &mut rng);
        let mut unl = Cycler::new(n_u, &mut rng);
        for s in 0..steps_per_epoch {
            let ix = lab.take(cfg.batch_size, &mut rng);
            let iu = unl.take(cfg.unlabeled_batch(), &mut rng);
            let t = match cfg.lr_schedule {
                LrSchedule::PerEpoch => epoch as f64,
                LrSchedule::PerStep => epoch as f64 + s as f64 / steps_per_epoch as f64,
            };
            let lr = lr_at(cfg.eta0, t, cfg.epochs as f64)?;
            let y: Vec<usize> = ix.iter().map(|&i| labeled.labels[i]).collect();
            let u = unlabeled.features.select_rows(&iu);
            let mut frozen = opt.frozen_sigma;
            let plan = plan_step(
                &model,
                labeled.features.select_rows(&ix),
                y,
                &u,
                cfg,
                &policies,
                &mut rng,
                &mut frozen,
            )?;
            opt.frozen_sigma = frozen;
            let b = train_step(&mut model, &mut opt, &plan, cfg, lr)?;
            emit(step_row(epoch * steps_per_epoch + s, epoch, &b), &mut metrics)?;
            outcome_steps.push(b);
        }
        opt.epoch += 1;
        let acc = if data.test.features.rows() > 0 {
            Some(evaluate(&model, &data.test.features, &data.test.labels)?)
        } else {
            None
        };
        log::info!(
            "epoch {}/{}: test accuracy {}",
            epoch + 1,
            cfg.epochs,
            acc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
        emit(epoch_row((epoch + 1) * steps_per_epoch, epoch, acc), &mut metrics)?;
        if let Some(w) = &mut metrics {
            w.flush().map_err(|e| Error::io(metrics_path.as_ref().unwrap(), e))?;
        }
        if let Some(dir) = &opts.run_dir {
            save_state(dir, &model, &opt)?;
        }
        epoch_accuracy.extend(acc);
        final_accuracy = acc;
        if opts.halt_after_epoch == Some(opt.epoch as usize) {
            break;
        }
    }

    if let (Some(dir), true) = (&opts.run_dir, opt.epoch as usize == cfg.epochs) {
        let summary = Summary {
            epochs: cfg.epochs,
            steps: opt.step,
            final_test_accuracy: final_accuracy,
        };
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&path, e))?;
    }

    Ok(TrainOutcome {
        model,
        steps: outcome_steps,
        epoch_accuracy,
        epochs_completed: opt.epoch as usize,
        final_accuracy,
    })
}
