//! Base vs. distribution-matching comparison over seeds.
//!
//! Both arms of a seed train on the same dataset and split; the configs
//! differ only in `lambda_mmd`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{train, RunOptions, TrainConfig};

pub const ARM_BASE: &str = "base";
pub const ARM_MMD: &str = "w.mmd";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: String,
    pub seed: u64,
    pub lambda_mmd: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<ArmSummary>,
}

impl AblationReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == name)
    }

    /// Whether the distribution-matching arm's mean is at least the base mean.
    pub fn mmd_not_worse(&self) -> Option<bool> {
        Some(self.arm(ARM_MMD)?.mean_accuracy >= self.arm(ARM_BASE)?.mean_accuracy)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<8} {:>4}  {:<18}\n", "arm", "runs", "test accuracy");
        for s in &self.summary {
            out.push_str(&format!(
                "{:<8} {:>4}  {:.4} ± {:.4}\n",
                s.arm, s.runs, s.mean_accuracy, s.std_accuracy
            ));
        }
        out
    }

    /// Writes `runs.csv`, `summary.csv` and `table.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("runs.csv"), &self.runs)?;
        write_csv(&dir.join("summary.csv"), &self.summary)?;
        let table = dir.join("table.txt");
        fs::write(&table, self.render_table()).map_err(|e| Error::io(&table, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.into(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<ArmSummary>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn summarize(arm: &str, accuracies: &[f64]) -> ArmSummary {
    let n = accuracies.len();
    let mean = accuracies.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 {
        (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    ArmSummary {
        arm: arm.into(),
        runs: n,
        mean_accuracy: mean,
        std_accuracy: std,
    }
}

/// Trains both arms for every seed. Run directories go under
/// `out_dir/runs/<arm>_seed<seed>` when `out_dir` is given.
pub fn ablate(cfg: &TrainConfig, seeds: &[u64], out_dir: Option<&Path>) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    cfg.validate()?;
    if cfg.lambda_mmd == 0.0 {
        log::warn!("lambda_mmd is 0: both arms are the base model");
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let seeded = TrainConfig { seed, ..cfg.clone() };
        let (ds, split) = seeded.prepare_data::<f64>()?;
        let data = split.training_data(&ds);
        for (arm, lambda) in [(ARM_BASE, 0.0), (ARM_MMD, cfg.lambda_mmd)] {
            let arm_cfg = TrainConfig {
                lambda_mmd: lambda,
                ..seeded.clone()
            };
            let opts = RunOptions {
                run_dir: out_dir.map(|d| d.join("runs").join(format!("{arm}_seed{seed}"))),
                ..Default::default()
            };
            let out = train(&arm_cfg, &data, &opts)?;
            let acc = out
                .final_accuracy
                .ok_or_else(|| Error::config("data.test_fraction", "ablation needs a test split"))?;
            log::info!("{arm} seed {seed}: test accuracy {acc:.4}");
            runs.push(RunRecord {
                arm: arm.into(),
                seed,
                lambda_mmd: lambda,
                test_accuracy: acc,
            });
        }
    }
    let summary = [ARM_BASE, ARM_MMD]
        .iter()
        .map(|&arm| {
            let accs: Vec<f64> = runs.iter().filter(|r| r.arm == arm).map(|r| r.test_accuracy).collect();
            summarize(arm, &accs)
        })
        .collect();
    let report = AblationReport { runs, summary };
    if let Some(d) = out_dir {
        report.write(d)?;
    }
    Ok(report)
}
