use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Dialogue, PAD};

/// Right-padded token matrix with a validity mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedMatrix {
    pub rows: usize,
    pub width: usize,
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    lengths: Vec<usize>,
}

impl PaddedMatrix {
    pub fn from_rows(rows: &[&[u32]]) -> Self {
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut ids = vec![PAD; rows.len() * width];
        let mut mask = vec![false; rows.len() * width];
        for (r, row) in rows.iter().enumerate() {
            ids[r * width..r * width + row.len()].copy_from_slice(row);
            mask[r * width..r * width + row.len()]
                .iter_mut()
                .for_each(|m| *m = true);
        }
        Self {
            rows: rows.len(),
            width,
            ids,
            mask,
            lengths: rows.iter().map(|r| r.len()).collect(),
        }
    }

    /// Unpadded tokens of row `r`.
    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width..r * self.width + self.lengths[r]]
    }

    pub fn valid_tokens(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Dialogues with identical turn counts, padded per turn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub dialogues: Vec<Dialogue>,
    pub turn_count: usize,
    /// One matrix per turn, one row per dialogue.
    pub sources: Vec<PaddedMatrix>,
    pub targets: Vec<PaddedMatrix>,
}

impl Batch {
    pub fn new(dialogues: Vec<Dialogue>) -> Result<Self, CorpusError> {
        let first = dialogues.first().ok_or(CorpusError::Empty)?;
        let turn_count = first.turns.len();
        if let Some(d) = dialogues.iter().find(|d| d.turns.len() != turn_count) {
            return Err(CorpusError::MixedTurnCounts(turn_count, d.turns.len()));
        }
        let per_turn = |f: fn(&super::Turn) -> &[u32]| {
            (0..turn_count)
                .map(|k| {
                    let rows: Vec<&[u32]> = dialogues.iter().map(|d| f(&d.turns[k])).collect();
                    PaddedMatrix::from_rows(&rows)
                })
                .collect::<Vec<_>>()
        };
        let sources = per_turn(|t| &t.user);
        let targets = per_turn(|t| &t.agent);
        Ok(Self {
            dialogues,
            turn_count,
            sources,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn target_tokens(&self) -> usize {
        self.targets.iter().map(PaddedMatrix::valid_tokens).sum()
    }
}

/// Groups dialogues by exact turn count and chunks each group into batches of
/// at most `batch_size`. With a seed, dialogues within a group and the order
/// of batches are shuffled deterministically; without one, corpus order is
/// kept and groups come in ascending turn count.
pub fn batch_by_turns(
    corpus: &[Dialogue],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut groups: BTreeMap<usize, Vec<&Dialogue>> = BTreeMap::new();
    for d in corpus {
        groups.entry(d.turns.len()).or_default().push(d);
    }
    let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let mut batches = Vec::new();
    for (_, mut group) in groups {
        if let Some(rng) = rng.as_mut() {
            group.shuffle(rng);
        }
        for chunk in group.chunks(batch_size) {
            let ds = chunk.iter().map(|d| (*d).clone()).collect();
            batches.push(Batch::new(ds).expect("group shares a turn count"));
        }
    }
    if let Some(rng) = rng.as_mut() {
        batches.shuffle(rng);
    }
    batches
}
