//! Run configuration: defaults, named dataset presets, TOML loading, and
//! validation. Command-line flags override file values; the file overrides
//! the built-in defaults.

use std::path::Path;

use thiserror::Error;

use crate::control::GaConfig;
use crate::conv::Attention;
use crate::hierarchy::{DeltaMode, Scoring};
use crate::model::{ModelConfig, Positional, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown preset {0:?} (expected one of {})", PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
}

pub const PRESET_NAMES: [&str; 7] = ["swat", "wadi", "smap", "msl", "tep", "hai", "synth"];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Sensor count; inferred from the data when absent.
    pub n: Option<usize>,
    pub w: usize,
    pub d: usize,
    pub k: usize,
    pub p_r: f64,
    /// Pairwise-graph ablation: force single-neighbor hyperedges.
    pub two_graph: bool,
    pub attention: Attention,
    pub scoring: Scoring,
    pub gating: bool,
    pub delta: DeltaMode,
    pub positional: Positional,
    pub use_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n: None,
            w: 30,
            d: 128,
            k: 15,
            p_r: 0.5,
            two_graph: false,
            attention: Attention::Softmax,
            scoring: Scoring::Softmax,
            gating: true,
            delta: DeltaMode::Difference,
            positional: Positional::Learned,
            use_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            lr_patience: t.lr_patience,
            stop_patience: t.stop_patience,
            val_frac: t.val_frac,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    /// Smoothing window for the aggregate score.
    pub w_a: usize,
    /// Default co-occurrence hops for diagnosis.
    pub k_hops: usize,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection { w_a: 10, k_hops: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    /// Steps a corrective plan is held and scored for.
    pub horizon: usize,
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover: f64,
    pub mutation_rate: f64,
    pub mutation_scale: f64,
    pub elitism: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        let g = GaConfig::default();
        ControlSection {
            horizon: 6,
            population: g.population,
            generations: g.generations,
            tournament: g.tournament,
            crossover: g.crossover,
            mutation_rate: g.mutation_rate,
            mutation_scale: g.mutation_scale,
            elitism: g.elitism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub detect: DetectSection,
    pub control: ControlSection,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        Ok(cfg)
    }

    /// Built-in starting points: one per supported dataset shape plus the
    /// synthetic benchmark.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let m = &mut cfg.model;
        match name {
            "swat" => {
                m.n = Some(51);
                m.w = 30;
                m.k = 15;
            }
            "wadi" => {
                m.n = Some(123);
                m.w = 30;
                m.k = 25;
            }
            "smap" => {
                m.n = Some(25);
                m.w = 60;
                m.k = 7;
            }
            "msl" => {
                m.n = Some(55);
                m.w = 60;
                m.k = 10;
            }
            "tep" => {
                m.n = Some(52);
                m.w = 30;
                m.k = 20;
            }
            "hai" => {
                m.n = Some(59);
                m.w = 25;
                m.k = 20;
            }
            "synth" => {
                m.n = Some(8);
                m.w = 24;
                m.d = 32;
                m.k = 3;
                m.p_r = 0.6;
            }
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        }
        Ok(cfg)
    }

    /// Effective neighbor count after the pairwise-graph coercion.
    pub fn effective_k(&self) -> usize {
        if self.model.two_graph {
            1
        } else {
            self.model.k
        }
    }

    /// Resolve the architecture against the sensor count seen in the data.
    pub fn model_config(&self, data_sensors: usize) -> Result<ModelConfig, ConfigError> {
        if let Some(n) = self.model.n {
            if n != data_sensors {
                return Err(ConfigError::Invalid(format!(
                    "config expects {n} sensors but the data has {data_sensors}"
                )));
            }
        }
        let m = &self.model;
        let mc = ModelConfig {
            n: data_sensors,
            w: m.w,
            d: m.d,
            k: self.effective_k(),
            p_r: m.p_r,
            positional: m.positional,
            attention: m.attention,
            scoring: m.scoring,
            gating: m.gating,
            delta: m.delta,
            use_embeddings: m.use_embeddings,
        };
        mc.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(mc)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let t = &self.train;
        let tc = TrainConfig {
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            lr_patience: t.lr_patience,
            stop_patience: t.stop_patience,
            val_frac: t.val_frac,
            seed: t.seed,
        };
        tc.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(tc)
    }

    pub fn ga_config(&self) -> Result<GaConfig, ConfigError> {
        let c = &self.control;
        let ga = GaConfig {
            population: c.population,
            generations: c.generations,
            tournament: c.tournament,
            crossover: c.crossover,
            mutation_rate: c.mutation_rate,
            mutation_scale: c.mutation_scale,
            elitism: c.elitism,
            seed: self.train.seed,
        };
        ga.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ga)
    }

    pub fn validate_sections(&self) -> Result<(), ConfigError> {
        if self.detect.w_a == 0 {
            return Err(ConfigError::Invalid(
                "detect.w_a must be at least 1".into(),
            ));
        }
        if self.control.horizon == 0 {
            return Err(ConfigError::Invalid(
                "control.horizon must be at least 1".into(),
            ));
        }
        self.train_config()?;
        self.ga_config()?;
        Ok(())
    }
}
