//! Inverse document frequency, sentence- and corpus-level IDF, and sparse
//! TF-IDF vectors with cosine similarity. Natural log throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, RawDialogue};

#[derive(Debug, Error)]
pub enum SpecificityError {
    #[error("empty corpus")]
    EmptyCorpus,
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
}

/// Which turn sides count as documents when building an [`IdfTable`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocumentSource {
    /// Each agent response is one document.
    #[default]
    Responses,
    /// Each user utterance and each agent response is one document.
    Both,
}

/// Document frequencies over `n` sentences; `idf(w) = ln(n / df(w))`.
/// Words never seen are treated as `df = 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdfTable {
    n: u64,
    df: BTreeMap<String, u64>,
}

impl IdfTable {
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>]) -> Result<Self, SpecificityError> {
        if sentences.is_empty() {
            return Err(SpecificityError::EmptyCorpus);
        }
        let mut df: BTreeMap<String, u64> = BTreeMap::new();
        for s in sentences {
            let uniq: BTreeSet<&str> = s.iter().map(AsRef::as_ref).collect();
            for w in uniq {
                *df.entry(w.to_string()).or_default() += 1;
            }
        }
        Ok(Self {
            n: sentences.len() as u64,
            df,
        })
    }

    pub fn from_dialogues(
        corpus: &[RawDialogue],
        source: DocumentSource,
    ) -> Result<Self, SpecificityError> {
        let mut sentences = Vec::new();
        for d in corpus {
            for t in &d.turns {
                if source == DocumentSource::Both {
                    sentences.push(tokenize(&t.user));
                }
                sentences.push(tokenize(&t.agent));
            }
        }
        Self::build(&sentences)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn df(&self, word: &str) -> Option<u64> {
        self.df.get(word).copied()
    }

    pub fn idf(&self, word: &str) -> f64 {
        let df = self.df.get(word).copied().unwrap_or(1);
        (self.n as f64 / df as f64).ln()
    }

    pub fn len(&self) -> usize {
        self.df.len()
    }

    pub fn is_empty(&self) -> bool {
        self.df.is_empty()
    }

    /// First line `N<TAB>n`, then `token<TAB>df` per word.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SpecificityError> {
        let path = path.as_ref();
        let io = |source| SpecificityError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "N\t{}", self.n).map_err(io)?;
        for (t, df) in &self.df {
            writeln!(w, "{t}\t{df}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpecificityError> {
        let path = path.as_ref();
        let io = |source| SpecificityError::Io {
            path: path.display().to_string(),
            source,
        };
        let parse = |line: usize, msg: &str| SpecificityError::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = BufReader::new(File::open(path).map_err(io)?).lines();
        let header = lines
            .next()
            .ok_or_else(|| parse(1, "missing N header"))?
            .map_err(io)?;
        let n: u64 = header
            .strip_prefix("N\t")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse(1, "expected N<TAB>count"))?;
        let mut df = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io)?;
            let (t, c) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse(i + 2, "expected token<TAB>df"))?;
            let c: u64 = c.trim().parse().map_err(|_| parse(i + 2, "bad df"))?;
            if c == 0 || c > n {
                return Err(parse(i + 2, "df out of range"));
            }
            df.insert(t.to_string(), c);
        }
        if n == 0 {
            return Err(SpecificityError::EmptyCorpus);
        }
        Ok(Self { n, df })
    }
}

/// Mean per-occurrence IDF of a sentence; 0 for an empty sentence.
pub fn idf_sentence<S: AsRef<str>>(sentence: &[S], table: &IdfTable) -> f64 {
    if sentence.is_empty() {
        return 0.0;
    }
    sentence.iter().map(|w| table.idf(w.as_ref())).sum::<f64>() / sentence.len() as f64
}

/// Occurrence-weighted IDF over a whole corpus: total IDF mass divided by the
/// total number of token occurrences.
pub fn idf_corpus<S: AsRef<str>>(sentences: &[Vec<S>], table: &IdfTable) -> f64 {
    let (sum, count) = sentences.iter().fold((0.0, 0usize), |(s, c), sent| {
        (
            s + sent.iter().map(|w| table.idf(w.as_ref())).sum::<f64>(),
            c + sent.len(),
        )
    });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Sparse TF-IDF weights; zero weights are never stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfIdfVector {
    weights: BTreeMap<String, f64>,
}

impl TfIdfVector {
    pub fn new<S: AsRef<str>>(context: &[S], table: &IdfTable) -> Self {
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for w in context {
            *counts.entry(w.as_ref()).or_default() += 1;
        }
        let weights = counts
            .into_iter()
            .filter_map(|(w, c)| {
                let v = c as f64 * table.idf(w);
                (v > 0.0).then(|| (w.to_string(), v))
            })
            .collect();
        Self { weights }
    }

    pub fn get(&self, word: &str) -> f64 {
        self.weights.get(word).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &TfIdfVector) -> f64 {
        if self.is_empty() || other.is_empty() {
            return 0.0;
        }
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let dot: f64 = small.iter().map(|(w, v)| v * large.get(w)).sum();
        dot / (self.norm() * other.norm())
    }
}

pub fn tfidf_vector<S: AsRef<str>>(context: &[S], table: &IdfTable) -> TfIdfVector {
    TfIdfVector::new(context, table)
}

pub fn cosine(u: &TfIdfVector, v: &TfIdfVector) -> f64 {
    u.cosine(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(String::from).collect()
    }

    fn ab_ac() -> IdfTable {
        IdfTable::build(&[s("a b"), s("a c")]).unwrap()
    }

    #[test]
    fn hand_idf_values() {
        let t = ab_ac();
        assert_eq!(t.idf("a"), 0.0);
        assert!((t.idf("b") - 2f64.ln()).abs() < 1e-15);
        assert!((t.idf("c") - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_sentence_corpus_has_zero_idf() {
        let t = IdfTable::build(&[s("x y x")]).unwrap();
        assert_eq!(t.idf("x"), 0.0);
        assert_eq!(t.idf("y"), 0.0);
    }

    #[test]
    fn unseen_word_uses_df_one() {
        let t = ab_ac();
        assert!((t.idf("zzz") - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(IdfTable::build::<String>(&[]).is_err());
    }

    #[test]
    fn sentence_idf() {
        let t = ab_ac();
        assert!((idf_sentence(&s("b b"), &t) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(idf_sentence(&s("a a a"), &t), 0.0);
        assert_eq!(idf_sentence::<String>(&[], &t), 0.0);
    }

    #[test]
    fn corpus_idf_is_occurrence_weighted() {
        let t = ab_ac();
        let v = idf_corpus(&[s("b"), s("a a a")], &t);
        assert!((v - 2f64.ln() / 4.0).abs() < 1e-15);
        let one = [s("b a")];
        assert_eq!(idf_corpus(&one, &t), idf_sentence(&one[0], &t));
        let two = [s("b a"), s("b a")];
        assert!((idf_corpus(&two, &t) - idf_corpus(&one, &t)).abs() < 1e-15);
    }

    #[test]
    fn tfidf_weights() {
        let t = ab_ac();
        let v = tfidf_vector(&s("b b"), &t);
        assert_eq!(v.len(), 1);
        assert!((v.get("b") - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(tfidf_vector(&s("a a"), &t).is_empty());
    }

    #[test]
    fn cosine_cases() {
        let t = IdfTable::build(&[s("a"), s("b"), s("c"), s("d")]).unwrap();
        let ab = tfidf_vector(&s("a b"), &t);
        let a = tfidf_vector(&s("a"), &t);
        let c = tfidf_vector(&s("c"), &t);
        assert!((cosine(&ab, &ab) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&ab, &c), 0.0);
        assert!((cosine(&ab, &a) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(cosine(&TfIdfVector::default(), &a), 0.0);
    }

    #[test]
    fn save_load_round_trip() {
        let t = ab_ac();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idf.txt");
        t.save(&p).unwrap();
        assert_eq!(IdfTable::load(&p).unwrap(), t);
    }

    #[test]
    fn document_source_switch() {
        let d = RawDialogue {
            id: "x".into(),
            turns: vec![crate::corpus::RawTurn {
                user: "q".into(),
                agent: "r".into(),
            }],
        };
        assert_eq!(
            IdfTable::from_dialogues(std::slice::from_ref(&d), DocumentSource::Responses)
                .unwrap()
                .n(),
            1
        );
        assert_eq!(
            IdfTable::from_dialogues(&[d], DocumentSource::Both)
                .unwrap()
                .n(),
            2
        );
    }

    fn dense_cosine(u: &[String], v: &[String], t: &IdfTable, vocab: &[String]) -> f64 {
        let vec = |x: &[String]| -> Vec<f64> {
            vocab
                .iter()
                .map(|w| x.iter().filter(|y| *y == w).count() as f64 * t.idf(w))
                .collect()
        };
        let (a, b) = (vec(u), vec(v));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]),
            0..8,
        )
        .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn idf_decreases_with_df(n in 2u64..50, df in 1u64..49) {
            prop_assume!(df < n);
            let lo = (n as f64 / df as f64).ln();
            let hi = (n as f64 / (df + 1) as f64).ln();
            prop_assert!(hi < lo);
        }

        #[test]
        fn sentence_idf_order_and_duplication_invariant(corpus in prop::collection::vec(words(), 1..20), sent in words()) {
            let t = IdfTable::build(&corpus).unwrap();
            let mut rev = sent.clone();
            rev.reverse();
            let mut dup = sent.clone();
            dup.extend(sent.clone());
            let base = idf_sentence(&sent, &t);
            prop_assert!((idf_sentence(&rev, &t) - base).abs() < 1e-12);
            prop_assert!((idf_sentence(&dup, &t) - base).abs() < 1e-12);
        }

        #[test]
        fn sparse_cosine_matches_dense(corpus in prop::collection::vec(words(), 1..50), u in words(), v in words()) {
            let t = IdfTable::build(&corpus).unwrap();
            let vocab: Vec<String> = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
            let sparse = cosine(&tfidf_vector(&u, &t), &tfidf_vector(&v, &t));
            prop_assert!((sparse - dense_cosine(&u, &v, &t, &vocab)).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&sparse));
        }
    }
}
