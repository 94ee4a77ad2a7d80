//! Run configuration: one TOML file with `[hd]`, `[train]`, `[nas]`,
//! `[stream]`, `[seeds]` and `[scenario]` sections. Every key is optional;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptor::TrainConfig;
use crate::continual::{EngineConfig, RoutingMode, StreamConfig};
use crate::encoder::{EncoderConfig, ScenarioConfig};
use crate::error::{EarError, Result};
use crate::hdc::BinarizeMode;
use crate::zsnas::NasConfig;

/// Environment variable consulted when no `--config` is given.
pub const CONFIG_ENV: &str = "EAR_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HdSection {
    pub gamma_focal: f64,
    pub tau_pi: f64,
    pub binarize: BinarizeMode,
}

impl Default for HdSection {
    fn default() -> Self {
        Self {
            gamma_focal: 2.0,
            tau_pi: 0.7,
            binarize: BinarizeMode::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            batch: t.batch_size,
            epochs: t.epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub window: usize,
    pub trigger_fraction: f64,
    pub ood_threshold: f64,
    pub buffer: usize,
    pub segment: usize,
    pub routing: RoutingMode,
}

impl Default for StreamSection {
    fn default() -> Self {
        let s = StreamConfig::default();
        Self {
            window: s.window,
            trigger_fraction: s.trigger_fraction,
            ood_threshold: s.ood_threshold,
            buffer: s.buffer,
            segment: 2000,
            routing: s.routing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Scenario generation and data sampling.
    pub data: u64,
    /// Initialization, binarization, search and training.
    pub model: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { data: 7, model: 11 }
    }
}

/// Synthetic scenario knobs; the segment length comes from `[stream]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub appearances: usize,
    pub separation: f64,
    pub class_spread: f64,
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub encoder: EncoderConfig,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        Self {
            num_tasks: s.num_tasks,
            classes_per_task: s.classes_per_task,
            appearances: s.appearances,
            separation: s.separation,
            class_spread: s.class_spread,
            noise: s.noise,
            train_per_class: 100,
            test_per_class: s.test_per_class,
            encoder: s.encoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub hd: HdSection,
    pub train: TrainSection,
    pub nas: NasConfig,
    pub stream: StreamSection,
    pub seeds: SeedSection,
    pub scenario: ScenarioSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| EarError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    /// Explicit path, else `$EAR_CONFIG`, else built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        match path {
            Some(p) => Ok((Self::load(&p)?, Some(p))),
            None => Ok((Self::default(), None)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine_config().validate()?;
        if self.stream.segment == 0 {
            return Err(EarError::Config("stream.segment must be positive".into()));
        }
        if self.scenario.train_per_class == 0 || self.scenario.test_per_class == 0 {
            return Err(EarError::Config("scenario per-class sample counts must be positive".into()));
        }
        self.scenario_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch,
            epochs: self.train.epochs,
            gamma_focal: self.hd.gamma_focal,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            seed: self.seeds.model,
        }
    }

    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            window: self.stream.window,
            trigger_fraction: self.stream.trigger_fraction,
            ood_threshold: self.stream.ood_threshold,
            buffer: self.stream.buffer,
            routing: self.stream.routing,
            tau_pi: self.hd.tau_pi,
            binarize: self.hd.binarize,
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            stream: self.stream_config(),
            train: self.train_config(),
            nas: self.nas.clone(),
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        ScenarioConfig {
            num_tasks: s.num_tasks,
            classes_per_task: s.classes_per_task,
            appearances: s.appearances,
            segment_length: self.stream.segment,
            separation: s.separation,
            class_spread: s.class_spread,
            noise: s.noise,
            test_per_class: s.test_per_class,
            encoder: s.encoder.clone(),
        }
    }

    /// Fully expanded config as TOML, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the expanded config, hex encoded. Two files that differ
    /// only in formatting or in spelling out defaults hash the same.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.hd.gamma_focal, 2.0);
        assert_eq!((c.train.lr, c.train.batch, c.train.epochs), (1e-3, 128, 40));
        assert_eq!((c.nas.beta0, c.nas.beta1, c.nas.gamma_spectral), (3e-6, 5.0, 3.0));
        assert_eq!((c.nas.knn, c.nas.batch, c.nas.budget, c.nas.warmup), (2, 128, 50, 10));
        assert_eq!((c.nas.kappa, c.nas.shrink), (2.5, 0.9));
        assert_eq!((c.stream.window, c.stream.buffer, c.stream.segment), (50, 1000, 2000));
        assert_eq!((c.stream.trigger_fraction, c.stream.ood_threshold), (0.6, 0.7));
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml_str("[train]\nlr = 0.005\n[stream]\nrouting = \"instant\"\n").unwrap();
        assert_eq!(c.train.lr, 0.005);
        assert_eq!(c.train.epochs, 40);
        assert_eq!(c.stream.routing, RoutingMode::Instant);
        assert_eq!(c.engine_config().train.gamma_focal, 2.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        for text in [
            "[train]\nlearning_rate = 0.1\n",
            "[bogus]\nx = 1\n",
            "[stream]\nwindow = 0\n",
            "[stream]\ntrigger_fraction = 1.5\n",
            "[nas]\nknn = 0\n",
            "[scenario]\nseparation = -1.0\n",
            "[hd]\nbinarize = \"maybe\"\n",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(EarError::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_formatting_but_not_values() {
        let a = RunConfig::from_toml_str("").unwrap();
        let b = RunConfig::from_toml_str("# comment\n[train]\nlr = 0.001\n").unwrap();
        let c = RunConfig::from_toml_str("[train]\nlr = 0.002\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn expanded_config_round_trips() {
        let mut c = RunConfig::default();
        c.seeds.model = 99;
        c.scenario.encoder.layer_widths = vec![32; 7];
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
