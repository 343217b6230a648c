//! Run configuration: one TOML document, overridable from flags and
//! snapshotted into the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use etts_core::acoustic::AcousticConfig;
use etts_core::adaptation::{AdaptationConfig, AdaptationTrainConfig};
use etts_core::autodiff::OptimizerConfig;
use etts_core::corpus::{FeatureConfig, SplitRatio};
use etts_core::emotion::PruningConfig;
use etts_core::pipeline::Stage1TrainConfig;
use etts_core::style::StyleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Base,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    /// CMUdict-style pronunciation dictionary; letters are used otherwise.
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Replaces the preset's acoustic config entirely when given.
    pub acoustic: Option<AcousticConfig>,
    pub style: Option<StyleConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Toy,
            acoustic: None,
            style: None,
        }
    }
}

impl ModelConfig {
    pub fn resolve(&self, vocab_size: usize) -> (AcousticConfig, StyleConfig) {
        let acoustic = self.acoustic.clone().unwrap_or_else(|| match self.preset {
            Preset::Toy => AcousticConfig::toy(vocab_size),
            Preset::Base => AcousticConfig::base(vocab_size),
        });
        let style = self.style.clone().unwrap_or_else(|| match self.preset {
            Preset::Toy => StyleConfig::toy(acoustic.d_model),
            Preset::Base => StyleConfig::base(acoustic.d_model),
        });
        (acoustic, style)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VocoderKind {
    GriffinLim,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocoder: VocoderKind,
    pub griffin_lim_iterations: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocoder: VocoderKind::GriffinLim,
            griffin_lim_iterations: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Every random choice in the run derives from this.
    pub seed: u64,
    /// `stub:builtin`, `stub:<lexicon>` or `external:<artifact.jsonl>`.
    pub provider: String,
    pub paths: Paths,
    pub features: FeatureConfig,
    pub split: SplitRatio,
    pub model: ModelConfig,
    pub stage1: Stage1TrainConfig,
    pub pruning: PruningConfig,
    pub adaptation: AdaptationConfig,
    pub stage2: AdaptationTrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            provider: "stub:builtin".into(),
            paths: Paths::default(),
            features: FeatureConfig::default(),
            split: SplitRatio::default(),
            model: ModelConfig::default(),
            stage1: Stage1TrainConfig {
                optimizer: OptimizerConfig::default(),
                ..Stage1TrainConfig::default()
            },
            pruning: PruningConfig::default(),
            adaptation: AdaptationConfig::default(),
            stage2: AdaptationTrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Propagates the top-level seed into every seeded component.
    pub fn apply_seed(&mut self) {
        self.stage1.seed = self.seed;
        self.stage2.seed = self.seed;
    }
}
