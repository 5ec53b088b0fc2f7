use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fcc::data::{Signal, SkipGramConfig, SynthConfig};
use fcc::model::ModelConfig;
use fcc::tensor::Precision;
use fcc::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// A whole run: data sources, model, training and auxiliary sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub precision: Precision,
    pub threads: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub skipgram: SkipGramSection,
    pub ablate: AblateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Word vectors in text format used to initialise the embedding table.
    pub embeddings: Option<PathBuf>,
    pub min_count: usize,
    /// Generate the corpus instead of reading files.
    pub synthetic: Option<SyntheticData>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            valid: None,
            test: None,
            embeddings: None,
            min_count: 1,
            synthetic: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub signal: Signal,
    pub lists: usize,
    pub seed: u64,
    pub valid_lists: usize,
    pub test_lists: usize,
    pub generator: SynthConfig,
}

impl Default for SyntheticData {
    fn default() -> Self {
        SyntheticData {
            signal: Signal::Provenance,
            lists: 2000,
            seed: 1,
            valid_lists: 200,
            test_lists: 400,
            generator: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramSection {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for SkipGramSection {
    fn default() -> Self {
        let d = SkipGramConfig::default();
        SkipGramSection {
            dim: d.dim,
            window: d.window,
            negatives: d.negatives,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
        }
    }
}

impl SkipGramSection {
    pub fn resolve(&self, seed: u64) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub variants: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            precision: Precision::F32,
            threads: 1,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            skipgram: SkipGramSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

/// Parses TOML, reporting the key path of any schema violation.
pub fn parse_config(text: &str) -> Result<RunConfig, fcc::Error> {
    let de = toml::Deserializer::parse(text).map_err(|e| fcc::Error::Config(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        fcc::Error::Config(format!("at `{path}`: {}", e.into_inner().message()))
    })
}

/// Loads a config file; relative data paths are resolved against its directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fcc::Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [
        &mut cfg.data.train,
        &mut cfg.data.valid,
        &mut cfg.data.test,
        &mut cfg.data.embeddings,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}
