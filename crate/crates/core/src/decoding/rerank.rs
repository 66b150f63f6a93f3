use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{DecodeError, Hypothesis, NBestList};
use crate::corpus::EOS;
use crate::eval::bleu4;
use crate::model::{AwiModel, AwiState};
use crate::tensor::Scalar;

/// Auxiliary score interpolated into the ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Idf,
    BackwardLlk,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Idf => "idf",
            ScoreKind::BackwardLlk => "backward-llk",
        })
    }
}

/// Rescores every hypothesis as normalized log-probability plus
/// `weight × aux` and re-sorts. The sort is stable, so equal scores keep
/// their previous order.
pub fn rerank(list: &NBestList, weight: f64, kind: ScoreKind) -> Result<NBestList, DecodeError> {
    let mut hyps = list.hypotheses.clone();
    for h in &mut hyps {
        let aux = h.aux(kind).ok_or(DecodeError::MissingScore(kind))?;
        h.score = h.normalized() + weight * aux;
    }
    hyps.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(NBestList {
        turn_id: list.turn_id.clone(),
        hypotheses: hyps,
    })
}

/// Length-normalized log-likelihood of `source` given `response` under a
/// model trained with the two sides swapped. Runs from a fresh intention
/// state with no previous response, so it depends on nothing else.
pub fn backward_score<T: Scalar>(
    backward: &AwiModel<T>,
    response: &[u32],
    source: &[u32],
) -> Result<f64, DecodeError> {
    let input: Vec<u32> = match response.last() {
        Some(&EOS) => response[..response.len() - 1].to_vec(),
        _ => response.to_vec(),
    };
    let input = if input.is_empty() { vec![EOS] } else { input };
    let mut target: Vec<u32> = source.iter().copied().filter(|&t| t != EOS).collect();
    target.push(EOS);
    let state = AwiState::new(backward.config());
    Ok(backward.normalized_llk(&state, &input, &[], &target)?)
}

/// `0, 0.005, ..., 0.5`
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 * 0.005).collect()
}

/// Grid search for the interpolation weight that maximizes corpus BLEU-4 of
/// the reranked top hypotheses. Ties go to the smaller weight. Returns the
/// weight and its BLEU.
pub fn mert_tune(
    lists: &[NBestList],
    references: &[Vec<u32>],
    kind: ScoreKind,
    grid: &[f64],
) -> Result<(f64, f64), DecodeError> {
    if grid.is_empty() || !grid.contains(&0.0) {
        return Err(DecodeError::InvalidSetting(
            "weight grid must contain 0".into(),
        ));
    }
    if let Some(i) = lists.iter().position(|l| l.hypotheses.is_empty()) {
        return Err(DecodeError::EmptyList(i));
    }
    let mut weights = grid.to_vec();
    weights.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for w in weights {
        let mut tops = Vec::with_capacity(lists.len());
        for l in lists {
            let r = rerank(l, w, kind)?;
            tops.push(r.hypotheses[0].words(EOS).to_vec());
        }
        let b = bleu4(&tops, references).map_err(|e| DecodeError::Metric(e.to_string()))?;
        if best.is_none_or(|(_, bb)| b > bb) {
            best = Some((w, b));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// One line per hypothesis: `turn-id ||| tokens ||| llk ||| idf ||| backward-llk`,
/// with `NA` for absent scores.
pub fn write_nbest<W: Write>(
    mut out: W,
    lists: &[NBestList],
    render: impl Fn(&[u32]) -> String,
) -> std::io::Result<()> {
    for l in lists {
        for h in &l.hypotheses {
            writeln!(
                out,
                "{} ||| {} ||| {} ||| {} ||| {}",
                l.turn_id,
                render(&h.tokens),
                h.log_prob,
                fmt_opt(h.idf),
                fmt_opt(h.backward_llk)
            )?;
        }
    }
    Ok(())
}

/// Reads a file written by [`write_nbest`]. Consecutive lines with the same
/// turn id form one list. Per-token log-probabilities are not stored in the
/// format, so they come back empty.
pub fn read_nbest<R: BufRead>(
    input: R,
    parse: impl Fn(&str) -> Vec<u32>,
) -> Result<Vec<NBestList>, DecodeError> {
    let mut lists: Vec<NBestList> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let bad = |msg: String| DecodeError::Parse { line: i + 1, msg };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(" ||| ").collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<Option<f64>, DecodeError> {
            if s == "NA" {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| bad(format!("bad number `{s}`: {e}")))
        };
        let log_prob = num(f[2])?.ok_or_else(|| bad("missing llk".into()))?;
        let tokens = parse(f[1]);
        let mut h = Hypothesis {
            tokens,
            log_prob,
            token_log_probs: Vec::new(),
            score: 0.0,
            idf: num(f[3])?,
            backward_llk: num(f[4])?,
        };
        h.score = h.normalized();
        match lists.last_mut() {
            Some(l) if l.turn_id == f[0] => l.hypotheses.push(h),
            _ => lists.push(NBestList {
                turn_id: f[0].to_string(),
                hypotheses: vec![h],
            }),
        }
    }
    Ok(lists)
}
