//! Turn-by-turn response generation shared by `generate` and `chat`, so a
//! chat transcript replayed through `generate` gives the same responses.

use anyhow::{bail, Result};
use awi::corpus::{RawDialogue, RawTurn, Vocabulary, EOS};
use awi::decoding::{
    backward_score, decode_turn, rerank, turn_seed, DecodeMode, DecodeOptions, Hypothesis,
    NBestList, ScoreKind,
};
use awi::model::{AwiModel, AwiState};
use awi::specificity::{idf_sentence, IdfTable};

use crate::config::{DecodeKind, DecodeSettings, Prior};

pub struct Responder<'a> {
    pub model: &'a AwiModel<f32>,
    pub vocab: &'a Vocabulary,
    pub idf: &'a IdfTable,
    pub backward: Option<(&'a AwiModel<f32>, f64)>,
    pub settings: DecodeSettings,
    pub seed: u64,
}

impl Responder<'_> {
    fn reranking(&self) -> Result<Option<(ScoreKind, f64)>> {
        match (self.settings.rerank_idf, self.backward) {
            (Some(_), Some(_)) => bail!("choose either IDF or backward-model reranking, not both"),
            (Some(w), None) => Ok(Some((ScoreKind::Idf, w))),
            (None, Some((_, w))) => Ok(Some((ScoreKind::BackwardLlk, w))),
            (None, None) => Ok(None),
        }
    }

    /// Reranking needs several hypotheses, so it turns greedy decoding into
    /// a beam of the configured width.
    fn mode(&self, dialogue: usize, turn: usize) -> Result<DecodeMode> {
        let s = &self.settings;
        Ok(match s.mode {
            DecodeKind::Greedy if self.reranking()?.is_some() => DecodeMode::Beam {
                width: s.beam_width,
            },
            DecodeKind::Greedy => DecodeMode::Greedy,
            DecodeKind::Beam => DecodeMode::Beam {
                width: s.beam_width,
            },
            DecodeKind::Sample => DecodeMode::Sample {
                seed: turn_seed(self.seed, dialogue, turn),
                temperature: s.temperature,
            },
        })
    }

    /// Decodes one turn. Hypotheses come back best first, each annotated
    /// with its sentence IDF and, given a backward model, its backward score.
    pub fn respond(
        &self,
        state: &AwiState<f32>,
        user: &str,
        prev: &[u32],
        dialogue: usize,
        turn: usize,
    ) -> Result<(AwiState<f32>, Vec<Hypothesis>)> {
        let source = self.vocab.encode_source(user);
        let opts = DecodeOptions {
            max_len: self.settings.max_len,
            ..Default::default()
        };
        let (next, mut hyps) = decode_turn(
            self.model,
            state,
            &source,
            prev,
            &self.mode(dialogue, turn)?,
            &opts,
        )?;
        for h in &mut hyps {
            h.idf = Some(idf_sentence(&self.vocab.words(&h.tokens), self.idf));
            if let Some((b, _)) = self.backward {
                h.backward_llk = Some(backward_score(b, &h.tokens, &source)?);
            }
        }
        if let Some((kind, w)) = self.reranking()? {
            let list = NBestList {
                turn_id: String::new(),
                hypotheses: hyps,
            };
            hyps = rerank(&list, w, kind)?.hypotheses;
        }
        Ok((next, hyps))
    }

    pub fn render(&self, h: &Hypothesis) -> String {
        self.vocab.decode(h.words(EOS))
    }

    /// Responds to every turn of `d` from a fresh state. Returns the
    /// dialogue with generated agent text and the hypotheses of each turn.
    pub fn dialogue(
        &self,
        d: &RawDialogue,
        index: usize,
        prior: Prior,
    ) -> Result<(RawDialogue, Vec<Vec<Hypothesis>>)> {
        let mut state = AwiState::new(self.model.config());
        let mut prev: Vec<u32> = Vec::new();
        let mut turns = Vec::with_capacity(d.turns.len());
        let mut all = Vec::with_capacity(d.turns.len());
        for (k, t) in d.turns.iter().enumerate() {
            let (next, hyps) = self.respond(&state, &t.user, &prev, index, k)?;
            state = next;
            let best = hyps.first().expect("decoding yields a hypothesis");
            turns.push(RawTurn {
                user: t.user.clone(),
                agent: self.render(best),
            });
            prev = match prior {
                Prior::Generated => best.tokens.clone(),
                Prior::Reference => self.vocab.encode_target(&t.agent),
            };
            all.push(hyps);
        }
        Ok((
            RawDialogue {
                id: d.id.clone(),
                turns,
            },
            all,
        ))
    }
}
