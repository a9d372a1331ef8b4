use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use foacount::datagen::{CorpusSource, DatasetSpec, NoiseSourceSpec};
use foacount::eval::Alignment;
use foacount::model::{CrnnConfig, N_CLASSES};
use foacount::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of word-aligned speech (`<speaker>/<utt>.wav` + `.wrd`);
    /// the synthetic toy corpus is used when unset.
    pub corpus: Option<PathBuf>,
    /// Directory of noise recordings; synthetic noise when unset.
    pub noise: Option<PathBuf>,
    pub rooms: PathBuf,
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let root = Path::new("foacount-work");
        Paths {
            corpus: None,
            noise: None,
            rooms: root.join("rooms"),
            dataset: root.join("dataset"),
            checkpoints: root.join("checkpoints"),
            reports: root.join("reports"),
        }
    }
}

/// Network size; `n_frames` and the input depth come from `[train]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_bins: usize,
    pub conv_channels: [usize; 4],
    pub lstm_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let full = CrnnConfig::full(10, 4);
        ModelSection {
            n_bins: full.n_bins,
            conv_channels: full.conv_channels,
            lstm_hidden: full.lstm_hidden,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub alignment: Alignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub data: DatasetSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            data: DatasetSpec {
                scale: 0.01,
                ..DatasetSpec::default()
            },
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Defaults, overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies the corpus/noise paths to the dataset spec and checks ranges.
    pub fn finish(mut self) -> Result<Self> {
        if let Some(p) = &self.paths.corpus {
            self.data.corpus = CorpusSource::Dir { path: p.clone() };
        }
        if let Some(p) = &self.paths.noise {
            self.data.noise = NoiseSourceSpec::Dir { path: p.clone() };
        }
        self.data.validate()?;
        if ![1, 4].contains(&self.train.channels) {
            bail!("channels must be 1 or 4, got {}", self.train.channels);
        }
        self.crnn().validate()?;
        Ok(self)
    }

    pub fn crnn(&self) -> CrnnConfig {
        CrnnConfig {
            n_frames: self.train.n_frames,
            n_bins: self.model.n_bins,
            in_channels: self.train.channels,
            conv_channels: self.model.conv_channels,
            lstm_hidden: self.model.lstm_hidden,
            n_classes: N_CLASSES,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
