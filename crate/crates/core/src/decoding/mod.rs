//! Response generation: greedy, beam and sampled decoding over any
//! [`SequenceModel`], plus n-best reranking and weight tuning.

mod rerank;

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Dialogue, BOS, EOS, PAD, UNK};
use crate::model::{AwiModel, AwiState, DecoderState, ModelError, TurnSession};
use crate::parallel::par_map;
use crate::tensor::Scalar;

pub use rerank::{
    backward_score, default_grid, mert_tune, read_nbest, rerank, write_nbest, ScoreKind,
};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid decode setting: {0}")]
    InvalidSetting(String),
    #[error("every token is masked at step {0}")]
    AllMasked(usize),
    #[error("hypothesis has no `{0}` score")]
    MissingScore(ScoreKind),
    #[error("n-best list {0} is empty")]
    EmptyList(usize),
    #[error("{0}")]
    Metric(String),
    #[error("n-best file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Anything that scores next tokens incrementally.
pub trait SequenceModel {
    type State: Clone;

    /// State before the first token; the first [`step`](Self::step) is fed
    /// the begin-of-sentence token.
    fn start(&mut self) -> Result<Self::State, DecodeError>;

    /// Consumes `prev` and returns the next state plus log-probabilities
    /// over the whole vocabulary.
    fn step(
        &mut self,
        state: &Self::State,
        prev: u32,
    ) -> Result<(Self::State, Vec<f64>), DecodeError>;
}

impl<T: Scalar> SequenceModel for TurnSession<'_, T> {
    type State = DecoderState;

    fn start(&mut self) -> Result<DecoderState, DecodeError> {
        Ok(self.initial())
    }

    fn step(
        &mut self,
        state: &DecoderState,
        prev: u32,
    ) -> Result<(DecoderState, Vec<f64>), DecodeError> {
        Ok(TurnSession::step(self, state, prev)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub max_len: usize,
    /// Tokens that are never generated; the rest is renormalized.
    pub masked: Vec<u32>,
    pub eos: u32,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            max_len: 50,
            masked: vec![BOS, UNK, PAD],
            eos: EOS,
        }
    }
}

impl DecodeOptions {
    fn validate(&self) -> Result<(), DecodeError> {
        if self.max_len == 0 {
            return Err(DecodeError::InvalidSetting(
                "max_len must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Log-probabilities with masked tokens at `-inf`, renormalized.
    fn mask(&self, lp: &[f64], step: usize) -> Result<Vec<f64>, DecodeError> {
        let mut out = lp.to_vec();
        for &m in &self.masked {
            if let Some(x) = out.get_mut(m as usize) {
                *x = f64::NEG_INFINITY;
            }
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(DecodeError::AllMasked(step));
        }
        let lse = out.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        out.iter_mut().for_each(|x| *x -= lse);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Ends with the end token unless cut off at the length limit.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub token_log_probs: Vec<f64>,
    /// Current ranking score; starts as the length-normalized log-probability.
    pub score: f64,
    pub idf: Option<f64>,
    pub backward_llk: Option<f64>,
}

impl Hypothesis {
    pub fn new(tokens: Vec<u32>, token_log_probs: Vec<f64>) -> Self {
        let log_prob = token_log_probs.iter().sum();
        let mut h = Self {
            tokens,
            log_prob,
            token_log_probs,
            score: 0.0,
            idf: None,
            backward_llk: None,
        };
        h.score = h.normalized();
        h
    }

    /// Log-probability per token, end token included.
    pub fn normalized(&self) -> f64 {
        if self.tokens.is_empty() {
            return 0.0;
        }
        self.log_prob / self.tokens.len() as f64
    }

    /// Tokens without the trailing end token.
    pub fn words(&self, eos: u32) -> &[u32] {
        match self.tokens.last() {
            Some(&t) if t == eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn aux(&self, kind: ScoreKind) -> Option<f64> {
        match kind {
            ScoreKind::Idf => self.idf,
            ScoreKind::BackwardLlk => self.backward_llk,
        }
    }
}

/// Hypotheses for one turn, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestList {
    pub turn_id: String,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }
}

/// Descending score, then lexicographic token order.
fn rank_order(a_score: f64, a: &[u32], b_score: f64, b: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a.cmp(b))
}

fn argmax(lp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in lp.iter().enumerate() {
        if x > lp[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<M: SequenceModel>(
    model: &mut M,
    opts: &DecodeOptions,
) -> Result<Hypothesis, DecodeError> {
    opts.validate()?;
    let mut state = model.start()?;
    let (mut tokens, mut lps) = (Vec::new(), Vec::new());
    let mut prev = BOS;
    for step in 0..opts.max_len {
        let (next, lp) = model.step(&state, prev)?;
        let lp = opts.mask(&lp, step)?;
        let y = argmax(&lp) as u32;
        tokens.push(y);
        lps.push(lp[y as usize]);
        if y == opts.eos {
            break;
        }
        state = next;
        prev = y;
    }
    Ok(Hypothesis::new(tokens, lps))
}

/// Length-synchronous beam search. Each step keeps the `width` best
/// expansions by total log-probability; expansions ending in the end token
/// are set aside as finished. Unfinished beams at `max_len` are kept as
/// truncated hypotheses. The result holds up to `width` hypotheses ranked by
/// length-normalized log-probability.
pub fn beam_search<M: SequenceModel>(
    model: &mut M,
    width: usize,
    opts: &DecodeOptions,
) -> Result<Vec<Hypothesis>, DecodeError> {
    opts.validate()?;
    if width == 0 {
        return Err(DecodeError::InvalidSetting(
            "beam width must be at least 1".into(),
        ));
    }
    struct Beam<S> {
        tokens: Vec<u32>,
        lps: Vec<f64>,
        total: f64,
        state: S,
    }
    let mut alive = vec![Beam {
        tokens: Vec::new(),
        lps: Vec::new(),
        total: 0.0,
        state: model.start()?,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..opts.max_len {
        let mut expanded = Vec::with_capacity(alive.len());
        // (total, beam index, token)
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (bi, b) in alive.iter().enumerate() {
            let prev = b.tokens.last().copied().unwrap_or(BOS);
            let (next, lp) = model.step(&b.state, prev)?;
            let lp = opts.mask(&lp, step)?;
            for (tok, &x) in lp.iter().enumerate() {
                if x > f64::NEG_INFINITY {
                    cands.push((b.total + x, bi, tok as u32));
                }
            }
            expanded.push((next, lp));
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0).then_with(|| {
                let (ta, tb) = (&alive[a.1].tokens, &alive[b.1].tokens);
                ta.iter().chain([&a.2]).cmp(tb.iter().chain([&b.2]))
            })
        });
        cands.truncate(width);

        let mut next_alive = Vec::with_capacity(cands.len());
        for (total, bi, tok) in cands {
            let parent = &alive[bi];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut lps = parent.lps.clone();
            lps.push(expanded[bi].1[tok as usize]);
            if tok == opts.eos {
                finished.push(Hypothesis::new(tokens, lps));
            } else {
                next_alive.push(Beam {
                    tokens,
                    lps,
                    total,
                    state: expanded[bi].0.clone(),
                });
            }
        }
        alive = next_alive;
        if alive.is_empty() {
            break;
        }
    }
    finished.extend(alive.into_iter().map(|b| Hypothesis::new(b.tokens, b.lps)));
    finished.sort_by(|a, b| rank_order(a.score, &a.tokens, b.score, &b.tokens));
    finished.truncate(width);
    Ok(finished)
}

/// Draws each token from the (masked, temperature-scaled) distribution.
pub fn sample_decode<M: SequenceModel>(
    model: &mut M,
    opts: &DecodeOptions,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Hypothesis, DecodeError> {
    opts.validate()?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DecodeError::InvalidSetting(
            "temperature must be positive".into(),
        ));
    }
    let mut state = model.start()?;
    let (mut tokens, mut lps) = (Vec::new(), Vec::new());
    let mut prev = BOS;
    for step in 0..opts.max_len {
        let (next, lp) = model.step(&state, prev)?;
        let lp = opts.mask(&lp, step)?;
        let scaled: Vec<f64> = if temperature == 1.0 {
            lp.clone()
        } else {
            opts.mask(
                &lp.iter().map(|x| x / temperature).collect::<Vec<_>>(),
                step,
            )?
        };
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut y = argmax(&scaled);
        for (i, &x) in scaled.iter().enumerate() {
            acc += x.exp();
            if u < acc {
                y = i;
                break;
            }
        }
        let y = y as u32;
        tokens.push(y);
        lps.push(lp[y as usize]);
        if y == opts.eos {
            break;
        }
        state = next;
        prev = y;
    }
    Ok(Hypothesis::new(tokens, lps))
}

/// How a turn's response is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Beam { width: usize },
    Sample { seed: u64, temperature: f64 },
}

/// Decodes one turn of a dialogue with the AWI model and returns the updated
/// intention state together with the hypotheses (one for greedy and
/// sampling, up to `width` for beam).
pub fn decode_turn<T: Scalar>(
    model: &AwiModel<T>,
    state: &AwiState<T>,
    source: &[u32],
    prev_response: &[u32],
    mode: &DecodeMode,
    opts: &DecodeOptions,
) -> Result<(AwiState<T>, Vec<Hypothesis>), DecodeError> {
    let (next, mut session) = model.begin_turn(state, source, prev_response)?;
    let hyps = match mode {
        DecodeMode::Greedy => vec![greedy_decode(&mut session, opts)?],
        DecodeMode::Beam { width } => beam_search(&mut session, *width, opts)?,
        DecodeMode::Sample { seed, temperature } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            vec![sample_decode(&mut session, opts, *temperature, &mut rng)?]
        }
    };
    Ok((next, hyps))
}

/// Which prior agent response conditions each turn after the first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PriorResponse {
    /// The reference response from the corpus.
    #[default]
    Reference,
    /// The response the model itself produced on the previous turn (end
    /// token kept, matching encoded references), as in an interactive session.
    Generated,
}

/// Seed for sampling one turn, derived from the run seed and the turn's
/// position so results do not depend on evaluation order.
pub fn turn_seed(seed: u64, dialogue: usize, turn: usize) -> u64 {
    let mut z = seed
        .wrapping_add((dialogue as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((turn as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Decodes every turn of every dialogue, carrying intention state through
/// each dialogue. Dialogues run in parallel; output follows input order.
pub fn decode_dialogues<T: Scalar>(
    model: &AwiModel<T>,
    dialogues: &[Dialogue],
    mode: &DecodeMode,
    opts: &DecodeOptions,
    prior: PriorResponse,
) -> Result<Vec<Vec<Vec<Hypothesis>>>, DecodeError> {
    let out = par_map(dialogues, |di, d| {
        let mut state = AwiState::new(model.config());
        let mut turns = Vec::with_capacity(d.turns.len());
        let mut generated: Vec<u32> = Vec::new();
        for (k, t) in d.turns.iter().enumerate() {
            let prev = match prior {
                PriorResponse::Reference => d.previous_response(k),
                PriorResponse::Generated => generated.as_slice(),
            };
            let turn_mode = match mode {
                DecodeMode::Sample { seed, temperature } => DecodeMode::Sample {
                    seed: turn_seed(*seed, di, k),
                    temperature: *temperature,
                },
                m => m.clone(),
            };
            let (next, hyps) = decode_turn(model, &state, &t.user, prev, &turn_mode, opts)?;
            generated = hyps.first().map(|h| h.tokens.clone()).unwrap_or_default();
            state = next;
            turns.push(hyps);
        }
        Ok(turns)
    });
    out.into_iter().collect()
}
