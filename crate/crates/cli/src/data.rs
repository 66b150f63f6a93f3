//! Loading corpora, splits, vocabulary, IDF tables and checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use awi::corpus::{read_dialogues, split, RawDialogue, Vocabulary};
use awi::model::{load_checkpoint, AwiConfig, AwiModel};
use awi::specificity::IdfTable;

use crate::config::ExperimentConfig;
use crate::{ModelPaths, SplitArg};

pub struct Splits {
    pub train: Vec<RawDialogue>,
    pub dev: Vec<RawDialogue>,
    pub test: Vec<RawDialogue>,
}

impl Splits {
    pub fn get(&self, which: SplitArg) -> &[RawDialogue] {
        match which {
            SplitArg::Train => &self.train,
            SplitArg::Dev => &self.dev,
            SplitArg::Test => &self.test,
        }
    }
}

/// Applies path flags on top of the config.
pub fn apply_paths(cfg: &mut ExperimentConfig, p: &ModelPaths) {
    let set = |dst: &mut PathBuf, src: &Option<PathBuf>| {
        if let Some(s) = src {
            dst.clone_from(s);
        }
    };
    set(&mut cfg.paths.corpus, &p.corpus);
    set(&mut cfg.paths.vocab, &p.vocab);
    set(&mut cfg.paths.idf, &p.idf);
    set(&mut cfg.paths.checkpoint, &p.checkpoint);
}

pub fn dialogues(path: &Path) -> Result<Vec<RawDialogue>> {
    read_dialogues(path).with_context(|| format!("reading dialogues {}", path.display()))
}

pub fn splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let all = dialogues(&cfg.paths.corpus)?;
    let (train, dev, test) = split(&all, cfg.data.dev_fraction, cfg.data.test_fraction);
    if train.is_empty() {
        bail!(
            "corpus {} leaves no training dialogues",
            cfg.paths.corpus.display()
        );
    }
    Ok(Splits { train, dev, test })
}

pub fn vocab(cfg: &ExperimentConfig) -> Result<Vocabulary> {
    let p = &cfg.paths.vocab;
    Vocabulary::load(p).with_context(|| format!("reading vocabulary {}", p.display()))
}

pub fn idf(cfg: &ExperimentConfig) -> Result<IdfTable> {
    let p = &cfg.paths.idf;
    IdfTable::load(p).with_context(|| format!("reading IDF table {}", p.display()))
}

/// Loads a checkpoint trained with `vocab` and checks its dimensions
/// against the configured model.
pub fn model(cfg: &ExperimentConfig, path: &Path, vocab: &Vocabulary) -> Result<AwiModel<f32>> {
    let (m, _) = load_checkpoint(path, Some(&vocab.checksum()))
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    check_dims(m.config(), &cfg.model.awi_config(vocab.len()))
        .with_context(|| format!("checkpoint {} does not match the config", path.display()))?;
    Ok(m)
}

/// Names the first dimension that differs.
pub fn check_dims(found: &AwiConfig, expected: &AwiConfig) -> Result<()> {
    let fields = [
        ("vocab_size", found.vocab_size, expected.vocab_size),
        ("embed_dim", found.embed_dim, expected.embed_dim),
        ("encoder_dim", found.encoder_dim, expected.encoder_dim),
        ("intention_dim", found.intention_dim, expected.intention_dim),
        ("decoder_dim", found.decoder_dim, expected.decoder_dim),
        ("attention_dim", found.attention_dim, expected.attention_dim),
        ("layers", found.layers, expected.layers),
    ];
    for (name, f, e) in fields {
        if f != e {
            bail!("model.{name}: expected {e}, found {f}");
        }
    }
    if found.use_similarity_feature != expected.use_similarity_feature {
        bail!(
            "model.use_similarity_feature: expected {}, found {}",
            expected.use_similarity_feature,
            found.use_similarity_feature
        );
    }
    Ok(())
}

/// Creates parent directories as needed.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// A file when `path` is given, stdout otherwise.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}
