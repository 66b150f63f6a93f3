//! Dialogue data: file format, tokenization, vocabulary, turn-count batching,
//! pretrained embeddings and the synthetic helpdesk generator.

mod batch;
mod embeddings;
pub mod synth;
mod tokenize;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{batch_by_turns, Batch, PaddedMatrix};
pub use embeddings::load_embeddings;
pub use tokenize::{detokenize, tokenize};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("empty corpus")]
    Empty,
    #[error("dialogue `{0}` has no turns")]
    NoTurns(String),
    #[error("batch mixes turn counts {0} and {1}")]
    MixedTurnCounts(usize, usize),
    #[error("embedding dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTurn {
    pub user: String,
    pub agent: String,
}

/// One line of a dialogues file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDialogue {
    pub id: String,
    pub turns: Vec<RawTurn>,
}

impl RawDialogue {
    /// Swaps user and agent sides, for training a target-to-source model.
    pub fn swapped(&self) -> RawDialogue {
        RawDialogue {
            id: self.id.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| RawTurn {
                    user: t.agent.clone(),
                    agent: t.user.clone(),
                })
                .collect(),
        }
    }
}

/// Token-id turn. `agent` always ends with [`EOS`]; `user` is never empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub user: Vec<u32>,
    pub agent: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Agent response of the turn before `k`, or empty at the first turn.
    pub fn previous_response(&self, k: usize) -> &[u32] {
        if k == 0 {
            &[]
        } else {
            &self.turns[k - 1].agent
        }
    }
}

pub fn read_dialogues(path: impl AsRef<Path>) -> Result<Vec<RawDialogue>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: RawDialogue = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if d.turns.is_empty() {
            return Err(CorpusError::NoTurns(d.id));
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_dialogues(
    path: impl AsRef<Path>,
    dialogues: &[RawDialogue],
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for d in dialogues {
        let line = serde_json::to_string(d).expect("dialogue serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Splits a corpus into consecutive train/dev/test parts by dialogue.
pub fn split<T: Clone>(
    items: &[T],
    dev_fraction: f64,
    test_fraction: f64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_dev = ((n as f64) * dev_fraction).round() as usize;
    let n_train = n.saturating_sub(n_test + n_dev);
    (
        items[..n_train].to_vec(),
        items[n_train..n_train + n_dev].to_vec(),
        items[n_train + n_dev..].to_vec(),
    )
}
