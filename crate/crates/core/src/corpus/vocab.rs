use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{io_err, tokenize, CorpusError, Dialogue, RawDialogue, RawTurn, Turn};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const PAD: u32 = 3;
pub const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<pad>"];

/// Token/id mapping. Ids 0..4 are reserved; the rest are ordered by
/// descending count, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; RESERVED.len()];
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            counts,
            index,
        }
    }

    /// Counts tokens on both sides of every turn.
    pub fn build(
        corpus: &[RawDialogue],
        min_count: u64,
        max_size: usize,
    ) -> Result<Self, CorpusError> {
        if corpus.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for d in corpus {
            for t in &d.turns {
                for tok in tokenize(&t.user).into_iter().chain(tokenize(&t.agent)) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(&t.as_str()))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_size);
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }

    /// Token ids for `text`; never empty (empty text maps to `[EOS]`).
    pub fn encode_source(&self, text: &str) -> Vec<u32> {
        let ids: Vec<u32> = tokenize(text).iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            vec![EOS]
        } else {
            ids
        }
    }

    /// Token ids for `text` followed by `EOS`.
    pub fn encode_target(&self, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(text).iter().map(|t| self.id(t)).collect();
        ids.push(EOS);
        ids
    }

    pub fn encode_turn(&self, turn: &RawTurn) -> Turn {
        Turn {
            user: self.encode_source(&turn.user),
            agent: self.encode_target(&turn.agent),
        }
    }

    pub fn encode_dialogue(&self, d: &RawDialogue) -> Dialogue {
        Dialogue {
            id: d.id.clone(),
            turns: d.turns.iter().map(|t| self.encode_turn(t)).collect(),
        }
    }

    pub fn encode_corpus(&self, corpus: &[RawDialogue]) -> Vec<Dialogue> {
        corpus.iter().map(|d| self.encode_dialogue(d)).collect()
    }

    /// Surface tokens with reserved ids removed.
    pub fn words<'a>(&'a self, ids: &[u32]) -> Vec<&'a str> {
        ids.iter()
            .filter(|&&i| !Self::is_reserved(i) || i == UNK)
            .map(|&i| self.token(i))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        super::detokenize(&self.words(ids))
    }

    /// SHA-256 over the id-ordered token list, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One `token<TAB>count` line per id, reserved tokens included.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        let parse = |line: usize, msg: String| CorpusError::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| parse(i + 1, "expected token<TAB>count".into()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse(i + 1, format!("bad count: {e}")))?;
            if i < RESERVED.len() {
                if tok != RESERVED[i] {
                    return Err(parse(
                        i + 1,
                        format!("expected reserved token {}", RESERVED[i]),
                    ));
                }
                continue;
            }
            entries.push((tok.to_string(), count));
        }
        Ok(Self::from_entries(entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[(&str, &str)]) -> Vec<RawDialogue> {
        vec![RawDialogue {
            id: "d".into(),
            turns: lines
                .iter()
                .map(|(u, a)| RawTurn {
                    user: u.to_string(),
                    agent: a.to_string(),
                })
                .collect(),
        }]
    }

    #[test]
    fn counts_both_sides() {
        let v = Vocabulary::build(&corpus(&[("a b", "a c")]), 1, 100).unwrap();
        assert_eq!(v.len(), 3 + RESERVED.len());
        assert_eq!(v.token(4), "a");
        assert_eq!(v.token(5), "b");
        assert_eq!(v.token(6), "c");
    }

    #[test]
    fn min_count_maps_rare_tokens_to_unknown() {
        let v = Vocabulary::build(&corpus(&[("a b", "a c")]), 2, 100).unwrap();
        assert_eq!(v.len(), 1 + RESERVED.len());
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn max_size_keeps_most_frequent() {
        let v = Vocabulary::build(&corpus(&[("a b", "a c")]), 1, 1).unwrap();
        assert_eq!(v.len(), 1 + RESERVED.len());
        assert!(v.contains("a"));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            Vocabulary::build(&[], 1, 10),
            Err(CorpusError::Empty)
        ));
    }

    #[test]
    fn reserved_ids_are_stable() {
        let v = Vocabulary::build(&corpus(&[("x", "y")]), 1, 10).unwrap();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), i as u32);
        }
        assert_eq!((BOS, EOS, UNK, PAD), (0, 1, 2, 3));
    }

    #[test]
    fn targets_end_with_eos_and_empty_source_is_eos() {
        let v = Vocabulary::build(&corpus(&[("a", "b")]), 1, 10).unwrap();
        let t = v.encode_turn(&RawTurn {
            user: String::new(),
            agent: String::new(),
        });
        assert_eq!(t.user, vec![EOS]);
        assert_eq!(t.agent, vec![EOS]);
        assert_eq!(v.encode_target("b a").last(), Some(&EOS));
    }

    #[test]
    fn save_load_keeps_ids() {
        let v = Vocabulary::build(&corpus(&[("b b a", "c a d")]), 1, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.checksum(), v.checksum());
    }
}
