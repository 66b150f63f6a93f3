//! Experiment settings read from one TOML file. Every section has defaults,
//! so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use awi::model::AwiConfig;
use awi::specificity::DocumentSource;
use awi::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub decode: DecodeSettings,
    pub retrieval: RetrievalSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub idf: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "data/dialogues.jsonl".into(),
            vocab: "data/vocab.tsv".into(),
            idf: "data/idf.tsv".into(),
            checkpoint: "runs/model.ckpt".into(),
            reports: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub min_count: u64,
    pub max_vocab: usize,
    pub idf_source: DocumentSource,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            dev_fraction: 0.1,
            test_fraction: 0.15,
            min_count: 1,
            max_vocab: 2000,
            idf_source: DocumentSource::Responses,
        }
    }
}

/// Model dimensions; the vocabulary size comes from the vocabulary file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub encoder_dim: usize,
    pub intention_dim: usize,
    pub decoder_dim: usize,
    pub attention_dim: usize,
    pub layers: usize,
    pub use_similarity_feature: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = AwiConfig::desk(0);
        Self {
            embed_dim: d.embed_dim,
            encoder_dim: d.encoder_dim,
            intention_dim: d.intention_dim,
            decoder_dim: d.decoder_dim,
            attention_dim: d.attention_dim,
            layers: d.layers,
            use_similarity_feature: d.use_similarity_feature,
        }
    }
}

impl ModelSettings {
    pub fn awi_config(&self, vocab_size: usize) -> AwiConfig {
        AwiConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            encoder_dim: self.encoder_dim,
            intention_dim: self.intention_dim,
            decoder_dim: self.decoder_dim,
            attention_dim: self.attention_dim,
            layers: self.layers,
            use_similarity_feature: self.use_similarity_feature,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeKind {
    #[default]
    Greedy,
    Beam,
    Sample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Prior {
    /// Condition on the reference response of the previous turn.
    #[default]
    Reference,
    /// Condition on the response generated for the previous turn.
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub mode: DecodeKind,
    pub beam_width: usize,
    pub max_len: usize,
    pub temperature: f64,
    /// Rerank a beam by normalized llk plus this weight times sentence IDF.
    pub rerank_idf: Option<f64>,
    pub prior: Prior,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            mode: DecodeKind::Greedy,
            beam_width: 10,
            max_len: 50,
            temperature: 1.0,
            rerank_idf: None,
            prior: Prior::Reference,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub negatives: usize,
    pub ks: Vec<usize>,
    pub weight_grid: Vec<f64>,
    /// Interpolation weight used when none is given on the command line.
    pub weight: Option<f64>,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            negatives: 9,
            ks: vec![1, 2, 5],
            weight_grid: (0..=80).map(|i| i as f64 * 0.25).collect(),
            weight: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        anyhow::ensure!(
            (0.0..1.0).contains(&d.dev_fraction) && (0.0..1.0).contains(&d.test_fraction),
            "data.dev_fraction and data.test_fraction must lie in [0, 1)"
        );
        anyhow::ensure!(
            d.dev_fraction + d.test_fraction < 1.0,
            "data.dev_fraction + data.test_fraction must leave training data"
        );
        self.model.awi_config(8).validate()?;
        self.train.validate()?;
        anyhow::ensure!(
            self.decode.beam_width >= 1,
            "decode.beam_width must be at least 1"
        );
        anyhow::ensure!(
            self.decode.max_len >= 1,
            "decode.max_len must be at least 1"
        );
        anyhow::ensure!(
            self.decode.temperature > 0.0,
            "decode.temperature must be positive"
        );
        anyhow::ensure!(
            self.retrieval.negatives >= 1,
            "retrieval.negatives must be at least 1"
        );
        anyhow::ensure!(
            self.retrieval.weight_grid.contains(&0.0),
            "retrieval.weight_grid must contain 0"
        );
        Ok(())
    }
}
