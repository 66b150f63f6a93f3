use crate::corpus::BOS;
use crate::tensor::kernels::log_softmax;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

use super::{AwiModel, AwiState, ModelError};

/// Graph nodes produced by encoding one user turn.
#[derive(Clone, Debug)]
pub struct EncodedTurn {
    /// Encoder summary `h_T` (d_x).
    pub summary: NodeId,
    /// Source word embeddings, one row per token (M×d_e).
    pub words: NodeId,
    /// `U_a·x_m` for every source word, shared by every attention call.
    keys: NodeId,
    /// Similarity bias (V), absent when the feature is off.
    pub similarity: Option<NodeId>,
    pub len: usize,
}

/// Word-level decoder state: one hidden node per layer plus the previous
/// response vector (absent before the first word).
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub hidden: Vec<NodeId>,
    pub response: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    /// Pre-softmax scores `r_n + sbar`.
    pub logits: NodeId,
    pub attention: NodeId,
    pub context: NodeId,
}

#[derive(Clone, Debug)]
pub struct TurnNodes {
    /// Summed negative log-likelihood of the target.
    pub nll: NodeId,
    pub token_nll: Vec<NodeId>,
    /// Intention nodes after this turn, one per layer.
    pub intention: Vec<NodeId>,
}

/// Teacher-forced score of one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnScore<T: Scalar = f32> {
    pub log_likelihood: f64,
    pub token_log_probs: Vec<f64>,
    pub next: AwiState<T>,
}

impl<T: Scalar> AwiModel<T> {
    fn check_tokens(&self, ids: &[u32]) -> Result<(), ModelError> {
        let v = self.config().vocab_size;
        match ids.iter().find(|&&t| t as usize >= v) {
            Some(&t) => Err(ModelError::TokenOutOfRange(t, v)),
            None => Ok(()),
        }
    }

    /// Intention state as constant graph nodes.
    pub fn state_nodes(
        &self,
        g: &mut Graph<'_, T>,
        state: &AwiState<T>,
    ) -> Result<Vec<NodeId>, ModelError> {
        if state.intention.len() != self.config().layers {
            return Err(ModelError::Mismatch {
                field: "intention layers".into(),
                expected: self.config().layers.to_string(),
                found: state.intention.len().to_string(),
            });
        }
        state
            .intention
            .iter()
            .map(|t| g.constant(t.clone()).map_err(ModelError::from))
            .collect()
    }

    /// Reads intention values back out of a graph.
    pub fn state_from_nodes(&self, g: &Graph<'_, T>, nodes: &[NodeId], turn: usize) -> AwiState<T> {
        AwiState {
            intention: nodes.iter().map(|&n| g.value(n).clone()).collect(),
            turn,
        }
    }

    pub fn encode_turn(
        &self,
        g: &mut Graph<'_, T>,
        source: &[u32],
        prev_response: &[u32],
    ) -> Result<EncodedTurn, ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptySource);
        }
        self.check_tokens(source)?;
        self.check_tokens(prev_response)?;
        let ids = &self.ids;
        let table = g.param(ids.embedding);
        let words = g.embedding(table, source)?;
        let u_cur = g.mean_rows(words)?;
        let u_prev = if prev_response.is_empty() {
            g.constant(Tensor::zeros(&[self.config().embed_dim]))?
        } else {
            let rows = g.embedding(table, prev_response)?;
            g.mean_rows(rows)?
        };
        let input = g.concat(&[u_cur, u_prev])?;
        let (w1, b1, w2, b2) = (
            g.param(ids.enc_w1),
            g.param(ids.enc_b1),
            g.param(ids.enc_w2),
            g.param(ids.enc_b2),
        );
        let h1 = g.affine(w1, input, Some(b1))?;
        let h1 = g.tanh(h1)?;
        let h2 = g.affine(w2, h1, Some(b2))?;
        let summary = g.tanh(h2)?;

        let key = g.param(ids.att_key);
        let keys = g.affine(key, words, None)?;

        let similarity = match ids.similarity {
            Some(p) => {
                let p = g.param(p);
                let rows = g.embedding(p, source)?;
                Some(g.mean_rows(rows)?)
            }
            None => None,
        };
        Ok(EncodedTurn {
            summary,
            words,
            keys,
            similarity,
            len: source.len(),
        })
    }

    /// One turn of the intention recurrence over all layers.
    pub fn intention_step(
        &self,
        g: &mut Graph<'_, T>,
        prev: &[NodeId],
        summary: NodeId,
    ) -> Result<Vec<NodeId>, ModelError> {
        let mut out = Vec::with_capacity(prev.len());
        let mut input = summary;
        for (l, &z) in prev.iter().enumerate() {
            let w = g.param(self.ids.int_recurrent[l]);
            let u = g.param(self.ids.int_input[l]);
            let a = g.affine(w, z, None)?;
            let b = g.affine(u, input, None)?;
            let s = g.add(a, b)?;
            input = g.tanh(s)?;
            out.push(input);
        }
        Ok(out)
    }

    /// Decoder hidden states before the first word, projected from the top
    /// intention vector.
    pub fn init_decoder(
        &self,
        g: &mut Graph<'_, T>,
        intention_top: NodeId,
    ) -> Result<DecoderState, ModelError> {
        let mut hidden = Vec::with_capacity(self.config().layers);
        for l in 0..self.config().layers {
            let w = g.param(self.ids.init_w[l]);
            let b = g.param(self.ids.init_b[l]);
            let h = g.affine(w, intention_top, Some(b))?;
            hidden.push(g.tanh(h)?);
        }
        Ok(DecoderState {
            hidden,
            response: None,
        })
    }

    /// Attention weights over source positions and the resulting context.
    pub fn attention(
        &self,
        g: &mut Graph<'_, T>,
        query_hidden: NodeId,
        enc: &EncodedTurn,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let va = g.param(self.ids.att_query);
        let v = g.param(self.ids.att_score);
        let q = g.affine(va, query_hidden, None)?;
        let s = g.add_row_broadcast(enc.keys, q)?;
        let t = g.tanh(s)?;
        // Rows of t dotted with v: one score per source word.
        let e = g.affine(t, v, None)?;
        let weights = g.softmax(e)?;
        let context = g.weighted_rows(weights, enc.words)?;
        Ok((weights, context))
    }

    /// Consumes `prev_token` and produces the distribution for the next word.
    pub fn decoder_step(
        &self,
        g: &mut Graph<'_, T>,
        state: &DecoderState,
        prev_token: u32,
        enc: &EncodedTurn,
    ) -> Result<StepOutput, ModelError> {
        self.check_tokens(&[prev_token])?;
        let ids = &self.ids;
        let layers = self.config().layers;

        let mut hidden = Vec::with_capacity(layers);
        for l in 0..layers {
            let vr = g.param(ids.dec_recurrent[l]);
            let mut s = g.affine(vr, state.hidden[l], None)?;
            if l == 0 {
                let wr = g.param(ids.word_input);
                let y = g.embedding(wr, &[prev_token])?;
                let y = g.mean_rows(y)?;
                s = g.add(s, y)?;
                if let Some(r) = state.response {
                    let ur = g.param(ids.response_input);
                    let r = g.affine(ur, r, None)?;
                    s = g.add(s, r)?;
                }
            } else {
                let w = g.param(ids.dec_input[l - 1]);
                let below = g.affine(w, hidden[l - 1], None)?;
                s = g.add(s, below)?;
            }
            hidden.push(g.tanh(s)?);
        }

        let query = *state.hidden.last().expect("at least one layer");
        let (attention, context) = self.attention(g, query, enc)?;

        let top = *hidden.last().expect("at least one layer");
        let mut x = top;
        for l in 0..layers {
            let w = g.param(ids.gen_hidden[l]);
            let is_top = l + 1 == layers;
            let bias = is_top.then(|| g.param(ids.gen_bias));
            let mut s = g.affine(w, x, bias)?;
            if l == 0 {
                let uc = g.param(ids.gen_context);
                let c = g.affine(uc, context, None)?;
                s = g.add(s, c)?;
            }
            // The top layer stays linear so logits are not confined to (-1, 1).
            x = if is_top { s } else { g.tanh(s)? };
        }
        let response = x;
        let logits = match enc.similarity {
            Some(sbar) => g.add(response, sbar)?,
            None => response,
        };
        Ok(StepOutput {
            state: DecoderState {
                hidden,
                response: Some(response),
            },
            logits,
            attention,
            context,
        })
    }

    /// Full teacher-forced turn: encode, update intention, decode `target`.
    pub fn turn_nll(
        &self,
        g: &mut Graph<'_, T>,
        intention_prev: &[NodeId],
        source: &[u32],
        prev_response: &[u32],
        target: &[u32],
    ) -> Result<TurnNodes, ModelError> {
        if target.is_empty() {
            return Err(ModelError::EmptyCandidate);
        }
        let enc = self.encode_turn(g, source, prev_response)?;
        let intention = self.intention_step(g, intention_prev, enc.summary)?;
        let (nll, token_nll) = self.target_nll(
            g,
            &enc,
            *intention.last().expect("at least one layer"),
            target,
        )?;
        Ok(TurnNodes {
            nll,
            token_nll,
            intention,
        })
    }

    /// Teacher-forced negative log-likelihood of `target` for an already
    /// encoded turn, decoding from the given top intention node. Returns the
    /// summed node and the per-token nodes.
    pub fn target_nll(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedTurn,
        intention_top: NodeId,
        target: &[u32],
    ) -> Result<(NodeId, Vec<NodeId>), ModelError> {
        if target.is_empty() {
            return Err(ModelError::EmptyCandidate);
        }
        self.check_tokens(target)?;
        let mut state = self.init_decoder(g, intention_top)?;
        let mut prev = BOS;
        let mut token_nll = Vec::with_capacity(target.len());
        for &y in target {
            let out = self.decoder_step(g, &state, prev, enc)?;
            token_nll.push(g.cross_entropy_pick(out.logits, y)?);
            state = out.state;
            prev = y;
        }
        Ok((g.sum(&token_nll)?, token_nll))
    }

    /// Advances the intention state past a turn without decoding.
    pub fn advance(
        &self,
        state: &AwiState<T>,
        source: &[u32],
        prev_response: &[u32],
    ) -> Result<AwiState<T>, ModelError> {
        let mut g = Graph::new(self.params());
        let prev = self.state_nodes(&mut g, state)?;
        let enc = self.encode_turn(&mut g, source, prev_response)?;
        let z = self.intention_step(&mut g, &prev, enc.summary)?;
        Ok(self.state_from_nodes(&g, &z, state.turn + 1))
    }

    /// Log-likelihood of `target` with per-token log-probabilities and the
    /// updated intention state.
    pub fn turn_log_likelihood(
        &self,
        state: &AwiState<T>,
        source: &[u32],
        prev_response: &[u32],
        target: &[u32],
    ) -> Result<TurnScore<T>, ModelError> {
        let mut g = Graph::new(self.params());
        let prev = self.state_nodes(&mut g, state)?;
        let nodes = self.turn_nll(&mut g, &prev, source, prev_response, target)?;
        let token_log_probs: Vec<f64> = nodes
            .token_nll
            .iter()
            .map(|&n| -g.value(n).data()[0].as_f64())
            .collect();
        Ok(TurnScore {
            log_likelihood: token_log_probs.iter().sum(),
            token_log_probs,
            next: self.state_from_nodes(&g, &nodes.intention, state.turn + 1),
        })
    }

    /// Log-likelihood divided by the candidate length (end token included).
    pub fn normalized_llk(
        &self,
        state: &AwiState<T>,
        source: &[u32],
        prev_response: &[u32],
        candidate: &[u32],
    ) -> Result<f64, ModelError> {
        if candidate.is_empty() {
            return Err(ModelError::EmptyCandidate);
        }
        let s = self.turn_log_likelihood(state, source, prev_response, candidate)?;
        Ok(s.log_likelihood / candidate.len() as f64)
    }

    /// Sum of token log-probabilities and token count over a whole dialogue,
    /// carrying intention state from a fresh start.
    pub fn dialogue_log_likelihood(
        &self,
        dialogue: &crate::corpus::Dialogue,
    ) -> Result<(f64, usize), ModelError> {
        let mut state = AwiState::new(self.config());
        let (mut total, mut count) = (0.0, 0);
        for k in 0..dialogue.turns.len() {
            let turn = &dialogue.turns[k];
            let s = self.turn_log_likelihood(
                &state,
                &turn.user,
                dialogue.previous_response(k),
                &turn.agent,
            )?;
            total += s.log_likelihood;
            count += turn.agent.len();
            state = s.next;
        }
        Ok((total, count))
    }

    /// Starts incremental decoding of one turn: updates the intention state
    /// and returns the new state plus a session that scores continuations.
    pub fn begin_turn(
        &self,
        state: &AwiState<T>,
        source: &[u32],
        prev_response: &[u32],
    ) -> Result<(AwiState<T>, TurnSession<'_, T>), ModelError> {
        let mut g = Graph::new(self.params());
        let prev = self.state_nodes(&mut g, state)?;
        let enc = self.encode_turn(&mut g, source, prev_response)?;
        let z = self.intention_step(&mut g, &prev, enc.summary)?;
        let next = self.state_from_nodes(&g, &z, state.turn + 1);
        let init = self.init_decoder(&mut g, *z.last().expect("at least one layer"))?;
        Ok((
            next,
            TurnSession {
                model: self,
                graph: g,
                enc,
                init,
            },
        ))
    }
}

/// Incremental scorer for one turn. Decoder states are graph handles, so
/// any number of hypotheses can branch from a shared prefix.
pub struct TurnSession<'m, T: Scalar> {
    model: &'m AwiModel<T>,
    graph: Graph<'m, T>,
    enc: EncodedTurn,
    init: DecoderState,
}

impl<'m, T: Scalar> TurnSession<'m, T> {
    pub fn initial(&self) -> DecoderState {
        self.init.clone()
    }

    /// Feeds `prev_token` and returns the next state and log-probabilities
    /// over the vocabulary.
    pub fn step(
        &mut self,
        state: &DecoderState,
        prev_token: u32,
    ) -> Result<(DecoderState, Vec<f64>), ModelError> {
        let out = self
            .model
            .decoder_step(&mut self.graph, state, prev_token, &self.enc)?;
        let lp = log_softmax(self.graph.value(out.logits).data());
        Ok((out.state, lp))
    }

    /// Like [`step`](Self::step) but also returns the attention weights.
    pub fn step_with_attention(
        &mut self,
        state: &DecoderState,
        prev_token: u32,
    ) -> Result<(DecoderState, Vec<f64>, Vec<f64>), ModelError> {
        let out = self
            .model
            .decoder_step(&mut self.graph, state, prev_token, &self.enc)?;
        let lp = log_softmax(self.graph.value(out.logits).data());
        let att = self.graph.value(out.attention).to_f64_vec();
        Ok((out.state, lp, att))
    }
}
