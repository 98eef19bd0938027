//! The run configuration: one TOML file covering every stage, with
//! command-line overrides applied on top.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ldlab::autoencoder::{AutoencoderConfig, AutoencoderTrainConfig};
use ldlab::detector::{DetectorConfig, DetectorTrainConfig};
use ldlab::editing::EditConfig;
use ldlab::evaluation::{Normalizer, DEFAULT_THRESHOLD};
use ldlab::pipelines::{AblationConfig, DiffusionSetup, SamplerConfig, TrainConfig};
use ldlab::procedural::N_STYLES;
use ldlab::seed::derive;
use serde::{Deserialize, Serialize};

/// File name of the frozen configuration written into every output directory.
pub const FROZEN_CONFIG: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every per-stage seed below is derived from it.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub autoencoder: AutoencoderSection,
    pub diffusion: DiffusionSetup,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub one_step: TrainConfig,
    pub generation: GenerationConfig,
    pub detector: DetectorSection,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub resolution: usize,
    pub stage1_n: usize,
    pub stage2_per_style: usize,
    pub validation_per_style: usize,
    pub styles: Vec<usize>,
    /// Edits applied to the validation corpus.
    pub validation_edits: EditConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            stage1_n: 2000,
            stage2_per_style: 32,
            validation_per_style: 8,
            styles: (1..=N_STYLES).collect(),
            validation_edits: EditConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSection {
    pub model: AutoencoderConfig,
    pub train: AutoencoderTrainConfig,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        Self {
            model: AutoencoderConfig { downsample_factor: 2, latent_channels: 4, base_width: 32 },
            train: AutoencoderTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub styles: Vec<usize>,
    pub per_style: usize,
    pub edits: EditConfig,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            styles: (1..=N_STYLES).collect(),
            per_style: 16,
            edits: EditConfig::default(),
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub model: DetectorConfig,
    pub pretrain: DetectorTrainConfig,
    pub finetune: DetectorTrainConfig,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            model: DetectorConfig::default(),
            pretrain: DetectorTrainConfig::default(),
            finetune: DetectorTrainConfig { steps: 1500, ..DetectorTrainConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub normalizer: Normalizer,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, normalizer: Normalizer::InterOcular }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let one_step = TrainConfig { steps: 2000, learning_rate: 1e-4, ..TrainConfig::default() };
        let stage2 = TrainConfig { learning_rate: 3e-5, ..one_step.clone() };
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            autoencoder: AutoencoderSection::default(),
            diffusion: DiffusionSetup::default(),
            stage1: TrainConfig::default(),
            stage2,
            one_step,
            generation: GenerationConfig::default(),
            detector: DetectorSection::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// Apply `section.key=value` overrides, where `value` is a TOML value
    /// (bare words are taken as strings).
    pub fn apply_overrides(self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut tree = toml::Table::try_from(&self)?;
        for o in overrides {
            let Some((key, raw)) = o.split_once('=') else {
                bail!("override {o:?} is not of the form key=value");
            };
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts.pop().filter(|s| !s.is_empty()).with_context(|| format!("empty key in {o:?}"))?;
            let mut table = &mut tree;
            for p in parts {
                table = table
                    .get_mut(p)
                    .and_then(toml::Value::as_table_mut)
                    .with_context(|| format!("unknown config section {p:?} in {o:?}"))?;
            }
            if !table.contains_key(last) {
                bail!("unknown config key {key:?}");
            }
            table.insert(last.to_string(), value);
        }
        Ok(toml::Value::Table(tree).try_into()?)
    }

    /// Derive every per-stage seed from the global seed.
    pub fn resolve_seeds(mut self) -> Self {
        let s = self.seed;
        self.autoencoder.train.seed = derive(s, "autoencoder", 0);
        self.stage1.seed = derive(s, "stage1", 0);
        self.stage2.seed = derive(s, "stage2", 0);
        self.one_step.seed = derive(s, "one_step", 0);
        self.generation.seed = derive(s, "generation", 0);
        self.detector.pretrain.seed = derive(s, "detector-pretrain", 0);
        self.detector.finetune.seed = derive(s, "detector-finetune", 0);
        self.ablation.seed = derive(s, "ablation", 0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.resolution < 8 {
            bail!("corpus.resolution {} is below 8", c.resolution);
        }
        for (name, styles) in [("corpus.styles", &c.styles), ("generation.styles", &self.generation.styles)] {
            if let Some(s) = styles.iter().find(|&&s| s == 0 || s > N_STYLES) {
                bail!("{name} contains {s}; styles are 1..={N_STYLES}");
            }
        }
        self.autoencoder.model.validate()?;
        self.diffusion.validate(c.resolution)?;
        for t in [&self.stage1, &self.stage2, &self.one_step] {
            t.validate()?;
        }
        self.generation.edits.validate()?;
        c.validation_edits.validate()?;
        if self.generation.sampler.ddim_steps == 0 || !self.generation.sampler.guidance_w.is_finite() {
            bail!("generation.sampler needs ddim_steps ≥ 1 and a finite guidance_w");
        }
        self.detector.model.validate()?;
        if self.detector.model.input_size != c.resolution {
            bail!("detector.model.input_size {} differs from corpus.resolution {}", self.detector.model.input_size, c.resolution);
        }
        if !(self.eval.threshold > 0.0) {
            bail!("eval.threshold must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default().resolve_seeds();
        c.validate().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let c = RunConfig::default()
            .apply_overrides(&["stage1.steps=7".into(), "seed=3".into(), "eval.normalizer=bounding_box_diagonal".into()])
            .unwrap();
        assert_eq!((c.stage1.steps, c.seed), (7, 3));
        assert_eq!(c.eval.normalizer, Normalizer::BoundingBoxDiagonal);
        assert!(RunConfig::default().apply_overrides(&["stage1.stepz=7".into()]).is_err());
        assert!(RunConfig::default().apply_overrides(&["nope.steps=7".into()]).is_err());
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
