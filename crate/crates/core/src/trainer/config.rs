use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{
    generate_gaussian_mixture, generate_rings, load_csv, make_ssl_split, CsvSchema, Dataset, GaussianMixtureSpec,
    RingsSpec, SslSplit,
};
use crate::error::{Error, Result};
use crate::loss_mmd::KernelConfig;
use crate::loss_ssc::TemperatureForm;
use crate::model::Activation;
use crate::pseudo_label::LabelWeights;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    GaussianMixture(GaussianMixtureSpec),
    Rings(RingsSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub labels_per_class: usize,
    pub test_fraction: f64,
    /// Seed for generation and splitting; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::GaussianMixture(GaussianMixtureSpec {
                classes: 2,
                per_class: 604,
                dim: 2,
                separation: 3.0,
                distractor_classes: 0,
            }),
            labels_per_class: 4,
            test_fraction: 100.0 / 604.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden layer widths; the input width comes from the data.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            embed_dim: 16,
            activation: Activation::Relu,
        }
    }
}

/// What `t` in the learning-rate schedule counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Whole epochs: constant within an epoch.
    #[default]
    PerEpoch,
    /// Fractional epochs: `epoch + step / steps_per_epoch`.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub mu: usize,
    pub epochs: usize,
    pub eta0: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    /// Cap on the global gradient norm; none by default.
    pub grad_clip: Option<f64>,
    pub tau: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    pub temperature_form: TemperatureForm,
    /// Pseudo-labeling temperature.
    pub t_prime: f64,
    pub lambda_weights: LabelWeights,
    pub lambda_mmd: f64,
    /// Entropy threshold for distribution matching; `0.5 ln K` when absent.
    pub epsilon_p: Option<f64>,
    /// Scale the entropy-gating softmax by `1 / t_prime`. Without it the
    /// logits are cosines in [-1, 1], no prediction has entropy below
    /// `0.5 ln K`, and the default threshold selects nothing.
    pub selection_uses_t_prime: bool,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub data: DataConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            mu: 7,
            epochs: 256,
            eta0: 0.03,
            momentum: 0.9,
            lr_schedule: LrSchedule::PerEpoch,
            grad_clip: None,
            tau: 0.95,
            temperature: 0.1,
            temperature_form: TemperatureForm::Scaled,
            t_prime: 0.1,
            lambda_weights: LabelWeights::default(),
            lambda_mmd: 1.0,
            epsilon_p: None,
            selection_uses_t_prime: true,
            kernel: KernelConfig::default(),
            seed: 0,
            encoder: EncoderConfig::default(),
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be positive and finite"))
    }
}

impl TrainConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if self.mu < 1 {
            return Err(Error::config("mu", "must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        positive("eta0", self.eta0)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            positive("grad_clip", c)?;
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("tau", "must lie in (0, 1)"));
        }
        positive("temperature", self.temperature)?;
        positive("t_prime", self.t_prime)?;
        self.lambda_weights.validate()?;
        if !(self.lambda_mmd >= 0.0 && self.lambda_mmd.is_finite()) {
            return Err(Error::config("lambda_mmd", "must be finite and non-negative"));
        }
        if let Some(e) = self.epsilon_p {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::config("epsilon_p", "must be finite and non-negative"));
            }
        }
        self.kernel.validate()?;
        if self.encoder.embed_dim == 0 || self.encoder.hidden.contains(&0) {
            return Err(Error::config("encoder", "widths must be positive"));
        }
        if self.data.labels_per_class == 0 {
            return Err(Error::config("data.labels_per_class", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::config("data.test_fraction", "must lie in [0, 1)"));
        }
        self.augment.validate()
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.mu * self.batch_size
    }

    pub fn epsilon_p_for(&self, class_count: usize) -> f64 {
        self.epsilon_p
            .unwrap_or_else(|| 0.5 * (class_count as f64).ln())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    /// Loads or generates the dataset and splits it.
    pub fn prepare_data<T: Real>(&self) -> Result<(Dataset<T>, SslSplit)> {
        let seed = self.data_seed();
        let ds = match &self.data.source {
            DataSource::GaussianMixture(spec) => generate_gaussian_mixture(seed, spec)?,
            DataSource::Rings(spec) => generate_rings(seed, spec)?,
            DataSource::Csv { path, schema } => {
                let (ds, warnings) = load_csv(path, schema)?;
                for w in warnings {
                    log::warn!("{w}");
                }
                ds
            }
        };
        let split = make_ssl_split(&ds, self.data.labels_per_class, self.data.test_fraction, seed)?;
        Ok((ds, split))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.unlabeled_batch(), c.epochs), (64, 448, 256));
        assert_eq!((c.eta0, c.momentum), (0.03, 0.9));
        assert_eq!(c.lambda_weights.unconfident, 0.2);
        assert!((c.epsilon_p_for(10) - 0.5 * 10f64.ln()).abs() < 1e-15);
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let c = TrainConfig::default();
        let back: TrainConfig = serde_json::from_str(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig = serde_json::from_str(r#"{"lambda_mmd": 0.0, "encoder": {"hidden": [8]}}"#).unwrap();
        assert_eq!(partial.lambda_mmd, 0.0);
        assert_eq!(partial.encoder.embed_dim, 16);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lambda": 1}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let bad = [
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { lambda_mmd: -1.0, ..Default::default() },
            TrainConfig { eta0: 0.0, ..Default::default() },
            TrainConfig { tau: 1.0, ..Default::default() },
        ];
        let fields = ["batch_size", "momentum", "lambda_mmd", "eta0", "tau"];
        for (c, f) in bad.iter().zip(fields) {
            match c.validate() {
                Err(Error::Config { field, .. }) => assert_eq!(field, f),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn default_data_gives_desk_scale_split() {
        let (ds, split) = TrainConfig::default().prepare_data::<f64>().unwrap();
        assert_eq!(ds.len(), 1208);
        assert_eq!(split.labeled().len(), 8);
        assert_eq!(split.unlabeled().len(), 1000);
        assert_eq!(split.test().len(), 200);
    }
}
