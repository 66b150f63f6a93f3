use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::Dialogue;
use crate::model::AwiModel;
use crate::parallel::par_map;
use crate::specificity::{idf_corpus, IdfTable};
use crate::tensor::Scalar;

fn ngram_counts<T: Eq + Hash>(s: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for g in s.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 with clipped n-gram precision and brevity penalty,
/// no smoothing: any order with zero matches gives 0.
pub fn bleu4<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<f64, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0);
    Ok(bp * log_p.exp())
}

/// Teacher-forced perplexity over every target token (end tokens included),
/// carrying intention state through each dialogue.
pub fn perplexity<T: Scalar>(model: &AwiModel<T>, corpus: &[Dialogue]) -> Result<f64, MetricError> {
    let parts = par_map(corpus, |_, d| model.dialogue_log_likelihood(d));
    let (mut total, mut count) = (0.0, 0usize);
    for p in parts {
        let (l, n) = p?;
        total += l;
        count += n;
    }
    if count == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok((-total / count as f64).exp())
}

/// Mean IDF over every word of every response.
pub fn corpus_idf_metric<S: AsRef<str>>(
    responses: &[Vec<S>],
    table: &IdfTable,
) -> Result<f64, MetricError> {
    if responses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(idf_corpus(responses, table))
}

/// Named evaluation results. Absent metrics are omitted from the text form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: Option<f64>,
    pub perplexity: Option<f64>,
    pub corpus_idf: Option<f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub instances: Option<usize>,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.bleu4 {
            writeln!(f, "bleu4\t{v:.6}")?;
        }
        if let Some(v) = self.perplexity {
            writeln!(f, "perplexity\t{v:.6}")?;
        }
        if let Some(v) = self.corpus_idf {
            writeln!(f, "corpus_idf\t{v:.6}")?;
        }
        for (k, v) in &self.recall_at {
            writeln!(f, "recall@{k}\t{v:.6}")?;
        }
        if let Some(n) = self.instances {
            writeln!(f, "instances\t{n}")?;
        }
        Ok(())
    }
}
