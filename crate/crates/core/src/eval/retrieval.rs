use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::{tokenize, CorpusError, RawDialogue, RawTurn, Vocabulary};
use crate::model::{AwiModel, AwiState};
use crate::parallel::par_map;
use crate::specificity::{IdfTable, TfIdfVector};
use crate::tensor::Scalar;

/// One 1-in-N response selection problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalInstance {
    pub dialogue_id: String,
    /// 1-based turn index of the positive response.
    pub turn: usize,
    /// Every earlier turn (both sides) followed by the current user input.
    pub context: String,
    /// Earlier turns, kept so the AWI scorer can rebuild intention state.
    pub history: Vec<RawTurn>,
    pub user: String,
    pub candidates: Vec<String>,
    pub positive_index: usize,
}

/// Builds one instance per turn. Negatives are agent responses drawn
/// uniformly from other dialogues of `corpus`, never equal to the positive
/// text or to each other. The positive lands at a random position.
pub fn build_instances(
    corpus: &[RawDialogue],
    negatives: usize,
    seed: u64,
) -> Result<Vec<RetrievalInstance>, MetricError> {
    let pool: Vec<(usize, &str)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(i, d)| d.turns.iter().map(move |t| (i, t.agent.as_str())))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (di, d) in corpus.iter().enumerate() {
        for k in 0..d.turns.len() {
            let positive = d.turns[k].agent.as_str();
            let mut cands: Vec<String> = Vec::with_capacity(negatives + 1);
            let mut tries = 0;
            while cands.len() < negatives {
                tries += 1;
                if tries > 1000 * (negatives + 1) {
                    return Err(MetricError::Invalid(format!(
                        "cannot find {negatives} distinct negatives for {} turn {}",
                        d.id,
                        k + 1
                    )));
                }
                let &(owner, text) = pool.choose(&mut rng).ok_or(MetricError::EmptyCorpus)?;
                if owner == di || text == positive || cands.iter().any(|c| c == text) {
                    continue;
                }
                cands.push(text.to_string());
            }
            let positive_index = rng.gen_range(0..=negatives);
            cands.insert(positive_index, positive.to_string());

            let history = d.turns[..k].to_vec();
            let mut context: Vec<&str> = Vec::new();
            for t in &history {
                context.push(&t.user);
                context.push(&t.agent);
            }
            context.push(&d.turns[k].user);
            out.push(RetrievalInstance {
                dialogue_id: d.id.clone(),
                turn: k + 1,
                context: context.join(" "),
                history,
                user: d.turns[k].user.clone(),
                candidates: cands,
                positive_index,
            });
        }
    }
    Ok(out)
}

pub fn write_instances(
    path: impl AsRef<Path>,
    instances: &[RetrievalInstance],
) -> Result<(), MetricError> {
    let path = path.as_ref();
    let io = |e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for inst in instances {
        let line = serde_json::to_string(inst).map_err(|e| MetricError::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<RetrievalInstance>, MetricError> {
    let path = path.as_ref();
    let io = |e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let r = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: RetrievalInstance =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if inst.positive_index >= inst.candidates.len() {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "positive_index out of range".into(),
            }
            .into());
        }
        out.push(inst);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    Tfidf,
    Awi,
    /// `llk + weight × cosine`
    Interpolated {
        weight: f64,
    },
    /// Uniform random scores, a control.
    Random {
        seed: u64,
    },
}

/// Per-candidate scores of each component for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentScores {
    pub cosine: Vec<f64>,
    /// Length-normalized log-likelihood under the AWI model, if scored.
    pub llk: Option<Vec<f64>>,
    pub positive_index: usize,
}

fn awi_scores<T: Scalar>(
    model: &AwiModel<T>,
    vocab: &Vocabulary,
    inst: &RetrievalInstance,
) -> Result<Vec<f64>, MetricError> {
    let mut state = AwiState::new(model.config());
    let mut prev: Vec<u32> = Vec::new();
    for t in &inst.history {
        state = model.advance(&state, &vocab.encode_source(&t.user), &prev)?;
        prev = vocab.encode_target(&t.agent);
    }
    let source = vocab.encode_source(&inst.user);
    inst.candidates
        .iter()
        .map(|c| Ok(model.normalized_llk(&state, &source, &prev, &vocab.encode_target(c))?))
        .collect()
}

/// Cosine scores for every instance, plus AWI likelihoods when a model is
/// given. Instances are scored in parallel; output order follows input.
pub fn score_instances<T: Scalar>(
    instances: &[RetrievalInstance],
    idf: &IdfTable,
    awi: Option<(&AwiModel<T>, &Vocabulary)>,
) -> Result<Vec<ComponentScores>, MetricError> {
    par_map(instances, |_, inst| {
        let ctx = TfIdfVector::new(&tokenize(&inst.context), idf);
        let cosine = inst
            .candidates
            .iter()
            .map(|c| ctx.cosine(&TfIdfVector::new(&tokenize(c), idf)))
            .collect();
        let llk = match awi {
            Some((m, v)) => Some(awi_scores(m, v, inst)?),
            None => None,
        };
        Ok(ComponentScores {
            cosine,
            llk,
            positive_index: inst.positive_index,
        })
    })
    .into_iter()
    .collect()
}

/// Final scores for a mode. `instance` seeds the random control so each
/// instance draws independently of evaluation order.
pub fn combine(
    scores: &ComponentScores,
    mode: RetrievalMode,
    instance: usize,
) -> Result<Vec<f64>, MetricError> {
    let need_llk = || {
        scores
            .llk
            .as_ref()
            .ok_or_else(|| MetricError::Invalid("AWI scores require a model".into()))
    };
    Ok(match mode {
        RetrievalMode::Tfidf => scores.cosine.clone(),
        RetrievalMode::Awi => need_llk()?.clone(),
        RetrievalMode::Interpolated { weight } => need_llk()?
            .iter()
            .zip(&scores.cosine)
            .map(|(l, c)| l + weight * c)
            .collect(),
        RetrievalMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (instance as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            scores.cosine.iter().map(|_| rng.gen::<f64>()).collect()
        }
    })
}

/// Candidate indices, best first; ties go to the lower index.
pub fn rank_candidates(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Fraction of instances whose positive is among the top `k`, for each `k`.
pub fn recall_at_k(
    scores: &[ComponentScores],
    mode: RetrievalMode,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (i, s) in scores.iter().enumerate() {
        let ranking = rank_candidates(&combine(s, mode, i)?);
        let pos = ranking
            .iter()
            .position(|&c| c == s.positive_index)
            .expect("positive is a candidate");
        for (&k, h) in hits.iter_mut() {
            if pos < k {
                *h += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|(k, h)| (k, h as f64 / scores.len() as f64))
        .collect())
}

/// Interpolation weight maximizing R@1 on `dev`, then R@5, then the smaller
/// weight. The grid must contain 0. Returns the weight and its recall map.
pub fn tune_retrieval_weight(
    dev: &[ComponentScores],
    grid: &[f64],
) -> Result<(f64, BTreeMap<usize, f64>), MetricError> {
    if !grid.contains(&0.0) {
        return Err(MetricError::Invalid("weight grid must contain 0".into()));
    }
    let mut weights = grid.to_vec();
    weights.sort_by(f64::total_cmp);
    let mut best: Option<(f64, BTreeMap<usize, f64>)> = None;
    for w in weights {
        let r = recall_at_k(dev, RetrievalMode::Interpolated { weight: w }, &[1, 5])?;
        let better = match &best {
            None => true,
            Some((_, b)) => (r[&1], r[&5]) > (b[&1], b[&5]),
        };
        if better {
            best = Some((w, r));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Vec<RawDialogue> {
        (0..n)
            .map(|i| RawDialogue {
                id: format!("d{i}"),
                turns: vec![
                    RawTurn {
                        user: format!("hello {i}"),
                        agent: format!("reply {i} a"),
                    },
                    RawTurn {
                        user: format!("more {i}"),
                        agent: format!("reply {i} b"),
                    },
                ],
            })
            .collect()
    }

    #[test]
    fn instances_have_one_positive_and_distinct_negatives() {
        let inst = build_instances(&corpus(20), 9, 1).unwrap();
        assert_eq!(inst.len(), 40);
        for x in &inst {
            assert_eq!(x.candidates.len(), 10);
            let pos = &x.candidates[x.positive_index];
            assert_eq!(x.candidates.iter().filter(|c| *c == pos).count(), 1);
            let mut sorted = x.candidates.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), 10);
        }
        assert_eq!(inst[1].context, "hello 0 reply 0 a more 0");
        assert_eq!(inst, build_instances(&corpus(20), 9, 1).unwrap());
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        assert!(build_instances(&corpus(1), 9, 1).is_err());
    }

    #[test]
    fn ranking_ties_prefer_lower_index() {
        assert_eq!(rank_candidates(&[0.5, 0.9, 0.5, 0.1]), vec![1, 0, 2, 3]);
    }

    #[test]
    fn perfect_scorer_and_monotone_recall() {
        let s: Vec<ComponentScores> = (0..10)
            .map(|i| {
                let mut cosine = vec![0.0; 10];
                cosine[i] = 1.0;
                ComponentScores {
                    cosine,
                    llk: None,
                    positive_index: i,
                }
            })
            .collect();
        let r = recall_at_k(&s, RetrievalMode::Tfidf, &[1, 5, 10]).unwrap();
        assert_eq!(r[&1], 1.0);
        assert_eq!(r[&10], 1.0);
        assert!(matches!(
            recall_at_k(&s, RetrievalMode::Awi, &[1]),
            Err(MetricError::Invalid(_))
        ));
    }
}
