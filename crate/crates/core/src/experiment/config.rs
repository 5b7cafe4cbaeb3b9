//! Experiment configuration files and the inputs they reference.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use mmkd_autograd::Activation;
use serde::{Deserialize, Serialize};

use crate::audio::AudioTeacherConfig;
use crate::classifier::HeadConfig;
use crate::corpus::{load_with_manifest, Dataset};
use crate::distill::DistillConfig;
use crate::emotion::graph::DEFAULT_WINDOW;
use crate::emotion::{EmotionLexicon, EmotionTeacherConfig, GcnConfig, RefineConfig};
use crate::encoder::{EncoderBackend, TOY_BACKEND};
use crate::error::{Error, Result};
use crate::fixtures::{toy_corpus, toy_lexicon};
use crate::teacher::Modality;
use crate::text_teacher::TextTeacherConfig;

pub const ARTIFACT_ROOT_ENV: &str = "MMKD_ARTIFACT_ROOT";
pub const DEFAULT_ARTIFACT_ROOT: &str = "artifacts";
/// Dataset or lexicon reference resolving to the bundled fixtures.
pub const BUILTIN_TOY: &str = "builtin:toy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmotionStageConfig {
    /// Encoder that initialises graph nodes and is refined on emotion labels.
    pub backend: String,
    pub encoder_width: Option<usize>,
    pub window: usize,
    pub gcn: GcnConfig,
    pub refine: RefineConfig,
    pub teacher: EmotionTeacherConfig,
}

impl Default for EmotionStageConfig {
    fn default() -> Self {
        Self {
            backend: TOY_BACKEND.into(),
            encoder_width: None,
            window: DEFAULT_WINDOW,
            gcn: GcnConfig::default(),
            refine: RefineConfig::default(),
            teacher: EmotionTeacherConfig::default(),
        }
    }
}

impl EmotionStageConfig {
    pub fn backend(&self) -> Result<EncoderBackend> {
        EncoderBackend::resolve(&self.backend, self.encoder_width)
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn builtin() -> String {
    BUILTIN_TOY.into()
}

fn all_modalities() -> BTreeSet<Modality> {
    Modality::ALL.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Propagated to every stage.
    pub seed: u64,
    pub dataset: String,
    #[serde(default = "builtin")]
    pub lexicon: String,
    /// Relative paths resolve under the artifact root.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "all_modalities")]
    pub teacher_set: BTreeSet<Modality>,
    /// Run every fold of the dataset protocol instead of the first split only.
    #[serde(default)]
    pub cross_validate: bool,
    #[serde(default)]
    pub text_teacher: TextTeacherConfig,
    #[serde(default)]
    pub emotion: EmotionStageConfig,
    #[serde(default)]
    pub audio: AudioTeacherConfig,
    #[serde(default)]
    pub distill: DistillConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Copy with the shared seed and teacher set pushed into every stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = c.seed;
        c.text_teacher.seed = s;
        c.emotion.gcn.seed = s;
        c.emotion.refine.seed = s;
        c.emotion.teacher.seed = s;
        c.audio.seed = s;
        c.audio.tts_seed = s;
        c.distill.seed = s;
        c.distill.teacher_set = c.teacher_set.clone();
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.teacher_set.is_empty() {
            return Err(Error::Config("teacher_set must not be empty".into()));
        }
        self.text_teacher.validate().map_err(|e| e.at_stage("text_teacher"))?;
        self.emotion.backend().map_err(|e| e.at_stage("emotion"))?;
        self.emotion.teacher.validate().map_err(|e| e.at_stage("emotion"))?;
        if self.emotion.window < 2 {
            return Err(Error::RangeError { param: "window".into(), value: self.emotion.window.to_string(), allowed: ">= 2".into() }
                .at_stage("emotion"));
        }
        self.audio.validate().map_err(|e| e.at_stage("audio"))?;
        self.distill.validate().map_err(|e| e.at_stage("distill"))
    }

    /// Where this run writes its artifacts.
    pub fn output_path(&self) -> PathBuf {
        let root = artifact_root();
        match &self.output_dir {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => root.join(p),
            None => root.join(&self.name),
        }
    }

    /// Desk-scale settings for the bundled fixtures. Learning rates and a
    /// few sizes sit outside the published search space, so every stage
    /// sets `override_ranges`.
    pub fn toy(seed: u64) -> Self {
        let head = |dropout| HeadConfig { n_layers: 2, n_heads: 2, dropout, activation: Activation::Gelu };
        Self {
            name: "toy".into(),
            seed,
            dataset: BUILTIN_TOY.into(),
            lexicon: BUILTIN_TOY.into(),
            output_dir: None,
            teacher_set: all_modalities(),
            cross_validate: false,
            text_teacher: TextTeacherConfig {
                head: head(0.01),
                lr: 5e-3,
                epochs: 5,
                batch_size: 4,
                override_ranges: true,
                ..Default::default()
            },
            emotion: EmotionStageConfig {
                gcn: GcnConfig { hidden: 16, epochs: 60, ..Default::default() },
                refine: RefineConfig { epochs: 5, ..Default::default() },
                teacher: EmotionTeacherConfig {
                    hidden_dim: 32,
                    lr: 1e-2,
                    epochs: 60,
                    batch_size: 8,
                    override_ranges: true,
                    ..Default::default()
                },
                ..Default::default()
            },
            audio: AudioTeacherConfig {
                n_layers: 2,
                n_heads: 2,
                lr: 1e-3,
                epochs: 8,
                plateau_patience: 2,
                batch_size: 8,
                max_frames: 48,
                override_ranges: true,
                ..Default::default()
            },
            distill: DistillConfig { head: head(0.1), lr: 5e-3, epochs: 5, batch_size: 4, override_ranges: true, ..Default::default() },
        }
    }
}

pub fn artifact_root() -> PathBuf {
    std::env::var_os(ARTIFACT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_ARTIFACT_ROOT))
}

/// The dataset and lexicon a config refers to.
#[derive(Clone, Debug)]
pub struct Resources {
    pub dataset: Dataset,
    pub lexicon: EmotionLexicon,
}

impl Resources {
    /// Loads both inputs before any training so bad references fail fast.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let dataset = if cfg.dataset == BUILTIN_TOY {
            toy_corpus()
        } else {
            load_with_manifest(Path::new(&cfg.dataset)).map_err(|e| e.at_stage("ingest"))?
        };
        let lexicon = if cfg.lexicon == BUILTIN_TOY {
            toy_lexicon()
        } else {
            EmotionLexicon::load(Path::new(&cfg.lexicon)).map_err(|e| e.at_stage("lexicon"))?
        };
        Ok(Self { dataset, lexicon })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_roundtrips_through_toml() {
        let c = ExperimentConfig::toy(3).resolved();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("dataset = \"builtin:toy\"").is_err());
        assert!(ExperimentConfig::from_toml_str("seed = 1\ndataset = \"x\"\nbogus = 2").is_err());
        let c = ExperimentConfig::from_toml_str("seed = 1\ndataset = \"builtin:toy\"").unwrap();
        assert_eq!(c.teacher_set.len(), 3);
    }

    #[test]
    fn out_of_space_values_need_override() {
        let mut c = ExperimentConfig::toy(1);
        c.distill.override_ranges = false;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("distill"), "{err}");
    }

    #[test]
    fn missing_lexicon_fails_at_its_stage() {
        let c = ExperimentConfig { lexicon: "/no/such/lexicon.tsv".into(), ..ExperimentConfig::toy(1) };
        let err = Resources::load(&c).unwrap_err();
        assert!(err.to_string().contains("lexicon"), "{err}");
    }
}
