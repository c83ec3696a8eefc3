//! Run configuration: one TOML document describing a whole experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ac::{ac_schema, AcTrainingConfig};
use crate::click::{ClickMode, ClickTrainingConfig};
use crate::error::{Error, Result};
use crate::eval::{DwellConfig, EvalFilter};
use crate::hashing::combine;
use crate::model::{Hyper, LatentFactorModel};
use crate::schema::FeatureSchema;
use crate::sim::{ServingConfig, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: u64,
    pub n_holdout: u64,
    pub train_seed: u64,
    pub holdout_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 1_000_000,
            n_holdout: 200_000,
            train_seed: 11,
            holdout_seed: 12,
        }
    }
}

/// Settings shared by the AC trainer and the click trainers. Both must see
/// the same threshold and the same kept skips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub tau_ac_s: f64,
    pub downsample_r: f64,
    pub sampling_seed: u64,
    /// Events per training period; `None` trains the AC model over the
    /// whole log before the click model.
    pub period: Option<u64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            tau_ac_s: 3.0,
            downsample_r: 1.0,
            sampling_seed: 13,
            period: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub hyper: Hyper,
    pub model_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            hyper: Hyper::default(),
            model_seed: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClickConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    /// Modes trained by `experiment`.
    pub modes: Vec<ClickMode>,
}

impl Default for ClickConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                model_seed: 15,
                ..ModelConfig::default()
            },
            modes: vec![
                ClickMode::Agnostic,
                ClickMode::Filtered,
                ClickMode::Unbiased,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub filter: EvalFilter,
    pub dwell: DwellConfig,
    pub sweep_grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            filter: EvalFilter::DwellLogged(false),
            dwell: DwellConfig::default(),
            sweep_grid: vec![1.0, 2.0, 3.0, 5.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed the component seeds were derived from; see [`RunConfig::reseed`].
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub ac: ModelConfig,
    pub click: ClickConfig,
    pub eval: EvalConfig,
    pub serving: ServingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            out_dir: None,
            world: WorldConfig::default(),
            data: DataConfig::default(),
            training: TrainingConfig::default(),
            ac: ModelConfig::default(),
            click: ClickConfig::default(),
            eval: EvalConfig::default(),
            serving: ServingConfig::default(),
        };
        cfg.reseed(1);
        cfg
    }
}

impl RunConfig {
    /// Derives every component seed from `seed`. Derived seeds stay below
    /// 2^53 so they survive TOML and JSON unchanged.
    pub fn reseed(&mut self, seed: u64) {
        let derive = |k: u64| combine(seed, k) >> 11;
        self.seed = seed;
        self.world.seed = derive(1);
        self.data.train_seed = derive(2);
        self.data.holdout_seed = derive(3);
        self.training.sampling_seed = derive(4);
        self.ac.model_seed = derive(5);
        self.click.model.model_seed = derive(6);
        self.serving.seed = derive(7);
    }

    pub fn reseeded(mut self, seed: u64) -> Self {
        self.reseed(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.ac_config().validate()?;
        self.click.model.hyper.validate()?;
        self.click_config(ClickMode::Agnostic).validate(false)?;
        self.eval.dwell.validate()?;
        if self.training.period == Some(0) {
            return Err(Error::Config("period must be positive".into()));
        }
        if self
            .eval
            .sweep_grid
            .iter()
            .any(|t| !(t.is_finite() && *t > 0.0))
        {
            return Err(Error::Config("sweep thresholds must be positive".into()));
        }
        if self.ac.dim == 0 || self.click.model.dim == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn ac_config(&self) -> AcTrainingConfig {
        AcTrainingConfig {
            tau_ac_s: self.training.tau_ac_s,
            downsample_r: self.training.downsample_r,
            dim: self.ac.dim,
            hyper: self.ac.hyper,
            model_seed: self.ac.model_seed,
            sampling_seed: self.training.sampling_seed,
        }
    }

    pub fn click_config(&self, mode: ClickMode) -> ClickTrainingConfig {
        ClickTrainingConfig {
            mode,
            tau_ac_s: self.training.tau_ac_s,
            downsample_r: self.training.downsample_r,
            sampling_seed: self.training.sampling_seed,
        }
    }

    pub fn new_ac_model(&self) -> Result<LatentFactorModel> {
        LatentFactorModel::new(ac_schema(), self.ac.dim, self.ac.hyper, self.ac.model_seed)
    }

    pub fn new_click_model(&self, log_schema: &FeatureSchema) -> Result<LatentFactorModel> {
        let m = &self.click.model;
        LatentFactorModel::new(log_schema.clone(), m.dim, m.hyper, m.model_seed)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
