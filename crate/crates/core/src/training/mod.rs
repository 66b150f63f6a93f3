//! The three training objectives over a shared epoch loop.
//!
//! Each batch holds dialogues with the same turn count. Every dialogue gets
//! its own graph (intention state starts at zero per dialogue), and the
//! per-dialogue gradients are summed in batch order, so results do not
//! depend on how many worker threads computed them.

mod report;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{batch_by_turns, Dialogue, Vocabulary, EOS};
use crate::decoding::{decode_turn, DecodeError, DecodeMode, DecodeOptions};
use crate::eval::{perplexity, MetricError};
use crate::model::{AwiModel, AwiState, ModelError};
use crate::parallel::par_map;
use crate::specificity::{idf_sentence, IdfTable};
use crate::tensor::{
    clip_global_norm, Gradients, Graph, OptimizerConfig, RmsPropMomentum, TensorError,
};

pub use report::{EpochRecord, TrainReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training setting: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Xent,
    IdfReinforce,
    Rank,
}

/// REINFORCE baseline: a constant, or the mean sentence IDF of the training
/// responses. Written as a number or as `"mean-train-idf"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Baseline {
    Constant(f64),
    Named(BaselineName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineName {
    MeanTrainIdf,
}

impl Baseline {
    pub const MEAN_TRAIN_IDF: Baseline = Baseline::Named(BaselineName::MeanTrainIdf);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub reinforce_baseline: Baseline,
    /// Scale the gradient of the sampled response instead of the reference
    /// (textbook REINFORCE). Off by default.
    pub canonical_reinforce: bool,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Length limit for responses decoded during training.
    pub decode_max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Xent,
            max_epochs: 10,
            batch_size: 20,
            clip_norm: 5.0,
            reinforce_baseline: Baseline::Constant(1.0),
            canonical_reinforce: false,
            negatives_per_positive: 1,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            decode_max_len: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Invalid(m.into()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1");
        }
        if self.optimizer.learning_rate.is_nan() || self.optimizer.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        if self.decode_max_len == 0 {
            return bad("decode_max_len must be at least 1");
        }
        Ok(())
    }
}

/// Halves the learning rate when dev perplexity went up; otherwise keeps it.
pub fn lr_schedule_update(prev_dev_ppl: f64, new_dev_ppl: f64, lr: f64) -> f64 {
    assert!(lr > 0.0, "learning rate must be positive");
    if new_dev_ppl > prev_dev_ppl {
        lr / 2.0
    } else {
        lr
    }
}

/// IDF resources for the reinforcement objective.
#[derive(Clone, Copy)]
pub struct RewardContext<'a> {
    pub idf: &'a IdfTable,
    pub vocab: &'a Vocabulary,
}

fn sentence_idf(ids: &[u32], ctx: &RewardContext<'_>) -> f64 {
    let words: Vec<&str> = ids
        .iter()
        .filter(|&&t| t != EOS)
        .map(|&t| ctx.vocab.token(t))
        .collect();
    idf_sentence(&words, ctx.idf)
}

/// Mean sentence IDF of every training response.
pub fn mean_train_idf(train: &[Dialogue], ctx: &RewardContext<'_>) -> f64 {
    let scores: Vec<f64> = train
        .iter()
        .flat_map(|d| d.turns.iter())
        .map(|t| sentence_idf(&t.agent, ctx))
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

fn is_non_finite(e: &TrainError) -> bool {
    let t = match e {
        TrainError::Tensor(t) | TrainError::Model(ModelError::Tensor(t)) => t,
        TrainError::Decode(DecodeError::Model(ModelError::Tensor(t))) => t,
        _ => return false,
    };
    matches!(t, TensorError::NonFinite { .. })
}

/// Loss, gradients and statistics for one dialogue.
struct DialogueOutcome {
    loss: f64,
    tokens: usize,
    grads: Gradients<f32>,
    /// Sum and count of generated-response IDF (reinforce).
    idf_sum: f64,
    idf_count: usize,
    skipped: usize,
    /// Sum of per-turn margins (rank).
    margin_sum: f64,
    turns: usize,
}

struct Step<'a> {
    config: &'a TrainConfig,
    reward: Option<RewardContext<'a>>,
    baseline: f64,
    epoch: usize,
}

fn xent_dialogue(model: &AwiModel<f32>, d: &Dialogue) -> Result<DialogueOutcome, TrainError> {
    let mut g = Graph::new(model.params());
    let mut z = model.state_nodes(&mut g, &AwiState::new(model.config()))?;
    let mut losses = Vec::with_capacity(d.turns.len());
    let mut tokens = 0;
    for (k, t) in d.turns.iter().enumerate() {
        let nodes = model.turn_nll(&mut g, &z, &t.user, d.previous_response(k), &t.agent)?;
        losses.push(nodes.nll);
        tokens += t.agent.len();
        z = nodes.intention;
    }
    let loss = g.sum(&losses)?;
    Ok(DialogueOutcome {
        loss: g.value(loss).data()[0] as f64,
        tokens,
        grads: g.backward(loss)?,
        idf_sum: 0.0,
        idf_count: 0,
        skipped: 0,
        margin_sum: 0.0,
        turns: d.turns.len(),
    })
}

fn reinforce_dialogue(
    model: &AwiModel<f32>,
    d: &Dialogue,
    index: usize,
    step: &Step<'_>,
) -> Result<DialogueOutcome, TrainError> {
    let ctx = step.reward.expect("reward context checked by caller");
    let opts = DecodeOptions {
        max_len: step.config.decode_max_len,
        ..DecodeOptions::default()
    };
    // Decode every turn first with the current parameters; the decoded
    // responses are constants for the gradient.
    let mut state = AwiState::new(model.config());
    let mut decoded = Vec::with_capacity(d.turns.len());
    for k in 0..d.turns.len() {
        let mode = if step.config.canonical_reinforce {
            let seed =
                step.config.seed ^ ((step.epoch as u64) << 48) ^ ((index as u64) << 16) ^ k as u64;
            DecodeMode::Sample {
                seed,
                temperature: 1.0,
            }
        } else {
            DecodeMode::Greedy
        };
        let (next, hyps) = decode_turn(
            model,
            &state,
            &d.turns[k].user,
            d.previous_response(k),
            &mode,
            &opts,
        )?;
        decoded.push(hyps.into_iter().next().expect("one hypothesis").tokens);
        state = next;
    }

    let mut g = Graph::new(model.params());
    let mut z = model.state_nodes(&mut g, &AwiState::new(model.config()))?;
    let mut terms = Vec::new();
    let (mut idf_sum, mut idf_count, mut skipped, mut tokens) = (0.0, 0, 0, 0);
    let mut loss_value = 0.0;
    for (k, t) in d.turns.iter().enumerate() {
        let enc = model.encode_turn(&mut g, &t.user, d.previous_response(k))?;
        let next = model.intention_step(&mut g, &z, enc.summary)?;
        let top = *next.last().expect("at least one layer");
        let r = sentence_idf(&decoded[k], &ctx);
        if r.is_finite() {
            idf_sum += r;
            idf_count += 1;
            let target = if step.config.canonical_reinforce {
                &decoded[k]
            } else {
                &t.agent
            };
            let (nll, _) = model.target_nll(&mut g, &enc, top, target)?;
            let advantage = r - step.baseline;
            loss_value += advantage * g.value(nll).data()[0] as f64;
            terms.push(g.scale(nll, advantage)?);
            tokens += target.len();
        } else {
            skipped += 1;
        }
        z = next;
    }
    let grads = if terms.is_empty() {
        Gradients::zeros_like(model.params())
    } else {
        let loss = g.sum(&terms)?;
        g.backward(loss)?
    };
    Ok(DialogueOutcome {
        loss: loss_value,
        tokens,
        grads,
        idf_sum,
        idf_count,
        skipped,
        margin_sum: 0.0,
        turns: d.turns.len(),
    })
}

fn rank_dialogue(
    model: &AwiModel<f32>,
    d: &Dialogue,
    negatives: &[Vec<Vec<u32>>],
) -> Result<DialogueOutcome, TrainError> {
    let mut g = Graph::new(model.params());
    let mut z = model.state_nodes(&mut g, &AwiState::new(model.config()))?;
    let mut terms = Vec::new();
    let (mut margin_sum, mut loss_value) = (0.0, 0.0);
    for (k, t) in d.turns.iter().enumerate() {
        let enc = model.encode_turn(&mut g, &t.user, d.previous_response(k))?;
        let next = model.intention_step(&mut g, &z, enc.summary)?;
        let top = *next.last().expect("at least one layer");
        let (pos, _) = model.target_nll(&mut g, &enc, top, &t.agent)?;
        let pos_len = t.agent.len() as f64;
        let j = negatives[k].len() as f64;
        // loss = nll(y)/|y| - mean_j nll(w_j)/|w_j| = -(margin)
        let mut turn_loss = g.value(pos).data()[0] as f64 / pos_len;
        terms.push(g.scale(pos, 1.0 / pos_len)?);
        for w in &negatives[k] {
            let (neg, _) = model.target_nll(&mut g, &enc, top, w)?;
            let wl = w.len() as f64;
            turn_loss -= g.value(neg).data()[0] as f64 / (wl * j);
            terms.push(g.scale(neg, -1.0 / (wl * j))?);
        }
        margin_sum -= turn_loss;
        loss_value += turn_loss;
        z = next;
    }
    let loss = g.sum(&terms)?;
    Ok(DialogueOutcome {
        loss: loss_value,
        tokens: d.turns.len(),
        grads: g.backward(loss)?,
        idf_sum: 0.0,
        idf_count: 0,
        skipped: 0,
        margin_sum,
        turns: d.turns.len(),
    })
}

/// Agent responses of other dialogues, drawn uniformly and never equal to
/// the positive. One list per turn.
fn sample_negatives(
    train: &[Dialogue],
    pool: &[(usize, usize)],
    dialogue: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Vec<u32>>>, TrainError> {
    let d = &train[dialogue];
    let mut out = Vec::with_capacity(d.turns.len());
    for t in &d.turns {
        let mut negs = Vec::with_capacity(count);
        let mut tries = 0;
        while negs.len() < count {
            tries += 1;
            if tries > 1000 * count {
                return Err(TrainError::Invalid(format!(
                    "corpus too small to sample a negative for dialogue {}",
                    d.id
                )));
            }
            let &(di, ti) = pool.choose(rng).expect("pool is non-empty");
            let cand = &train[di].turns[ti].agent;
            if di != dialogue && cand != &t.agent {
                negs.push(cand.clone());
            }
        }
        out.push(negs);
    }
    Ok(out)
}

/// Trains `model` in place with the configured objective. `dev` drives the
/// learning-rate schedule. For cross-entropy the parameters with the best
/// dev perplexity (including the starting point) are kept; the fine-tuning
/// objectives keep the parameters after the last epoch, since their
/// objective is not perplexity.
pub fn train(
    model: &mut AwiModel<f32>,
    train: &[Dialogue],
    dev: &[Dialogue],
    config: &TrainConfig,
    reward: Option<RewardContext<'_>>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Invalid("training corpus is empty".into()));
    }
    if dev.is_empty() {
        return Err(TrainError::Invalid("dev corpus is empty".into()));
    }
    let baseline = match config.objective {
        Objective::IdfReinforce => {
            let ctx = reward
                .as_ref()
                .ok_or_else(|| TrainError::Invalid("idf-reinforce needs an IDF table".into()))?;
            match config.reinforce_baseline {
                Baseline::Constant(b) => b,
                Baseline::Named(BaselineName::MeanTrainIdf) => mean_train_idf(train, ctx),
            }
        }
        _ => 0.0,
    };
    let pool: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.turns.len()).map(move |k| (i, k)))
        .collect();
    if config.objective == Objective::Rank && train.len() < 2 {
        return Err(TrainError::Invalid(
            "corpus too small to sample a negative: need at least two dialogues".into(),
        ));
    }

    let index_of: HashMap<&str, usize> = train
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    let mut opt = RmsPropMomentum::new(model.params(), config.optimizer);
    let initial_dev = perplexity(model, dev)?;
    let mut prev_dev = initial_dev;
    let mut best = (initial_dev, 0usize, model.params().clone());
    let mut report = TrainReport::new(config.objective, initial_dev, baseline);
    let mut neg_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5_eed0_f4e6);

    for epoch in 1..=config.max_epochs {
        let lr = opt.learning_rate();
        let batches = batch_by_turns(
            train,
            config.batch_size,
            Some(config.seed.wrapping_add(epoch as u64)),
        );
        let step = Step {
            config,
            reward,
            baseline,
            epoch,
        };
        let mut rec = EpochRecord::new(epoch, lr);
        let (mut loss_sum, mut token_sum) = (0.0, 0usize);
        let (mut idf_sum, mut idf_count, mut margin_sum, mut turn_sum) = (0.0, 0usize, 0.0, 0usize);
        for (bi, batch) in batches.iter().enumerate() {
            // Indices into `train` keep sampling and seeds independent of batching.
            let members: Vec<usize> = batch
                .dialogues
                .iter()
                .map(|d| index_of[d.id.as_str()])
                .collect();
            let negatives = if config.objective == Objective::Rank {
                members
                    .iter()
                    .map(|&i| {
                        sample_negatives(
                            train,
                            &pool,
                            i,
                            config.negatives_per_positive,
                            &mut neg_rng,
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                Vec::new()
            };
            let outcomes = par_map(&batch.dialogues, |i, d| match config.objective {
                Objective::Xent => xent_dialogue(model, d),
                Objective::IdfReinforce => reinforce_dialogue(model, d, members[i], &step),
                Objective::Rank => rank_dialogue(model, d, &negatives[i]),
            });
            let mut grads = Gradients::zeros_like(model.params());
            let mut batch_loss = 0.0;
            for o in outcomes {
                let o = o.map_err(|e| {
                    if is_non_finite(&e) {
                        TrainError::NonFiniteLoss { epoch, batch: bi }
                    } else {
                        e
                    }
                })?;
                batch_loss += o.loss;
                token_sum += o.tokens;
                idf_sum += o.idf_sum;
                idf_count += o.idf_count;
                rec.skipped_turns += o.skipped;
                margin_sum += o.margin_sum;
                turn_sum += o.turns;
                grads.add_scaled(&o.grads, 1.0);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            loss_sum += batch_loss;
            clip_global_norm(&mut grads, config.clip_norm);
            opt.step(model.params_mut(), &grads)?;
        }
        let dev_ppl = perplexity(model, dev)?;
        rec.train_loss = if token_sum > 0 {
            loss_sum / token_sum as f64
        } else {
            0.0
        };
        rec.dev_perplexity = dev_ppl;
        if config.objective == Objective::IdfReinforce {
            rec.mean_generated_idf = Some(if idf_count > 0 {
                idf_sum / idf_count as f64
            } else {
                0.0
            });
        }
        if config.objective == Objective::Rank {
            rec.mean_margin = Some(if turn_sum > 0 {
                margin_sum / turn_sum as f64
            } else {
                0.0
            });
        }
        opt.set_learning_rate(lr_schedule_update(prev_dev, dev_ppl, lr));
        prev_dev = dev_ppl;
        if dev_ppl < best.0 {
            best = (dev_ppl, epoch, model.params().clone());
        }
        report.push(rec);
    }

    if config.objective == Objective::Xent {
        report.best_epoch = best.1;
        report.best_dev_perplexity = best.0;
        *model.params_mut() = best.2;
    } else {
        report.best_epoch = config.max_epochs;
        report.best_dev_perplexity = prev_dev;
    }
    Ok(report)
}
