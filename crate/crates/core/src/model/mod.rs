//! The attention-with-intention conversation model.
//!
//! Per turn: a feed-forward encoder summarizes the user input and the
//! previous agent response as averaged embeddings; a turn-level tanh
//! recurrence updates the intention state; the intention initializes a
//! word-level tanh RNN decoder that attends over the user-input embeddings
//! and produces a response vector whose softmax (plus an optional input
//! similarity bias) is the next-word distribution.
//!
//! Upper layers of each stack take only the output of the layer below as
//! their input while keeping their own recurrence. A feed-forward-only
//! reading of the upper layers is also consistent with the original
//! description; it is not implemented here.

mod checkpoint;
mod export;
mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ParamId, ParamStore, Scalar, Tensor, TensorError};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use export::{export_intention, IntentionRecord};
pub use forward::{DecoderState, EncodedTurn, StepOutput, TurnNodes, TurnScore, TurnSession};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("source sequence is empty")]
    EmptySource,
    #[error("candidate sequence is empty")]
    EmptyCandidate,
    #[error("token id {0} outside vocabulary of size {1}")]
    TokenOutOfRange(u32, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint field `{field}` mismatch: expected {expected}, found {found}")]
    Mismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Dimensions of every stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwiConfig {
    pub vocab_size: usize,
    /// d_e
    pub embed_dim: usize,
    /// d_x
    pub encoder_dim: usize,
    /// d_z
    pub intention_dim: usize,
    /// d_r
    pub decoder_dim: usize,
    /// d_a
    pub attention_dim: usize,
    pub layers: usize,
    pub use_similarity_feature: bool,
}

impl AwiConfig {
    /// Full-size dimensions: d_e 300, d_x 1000, d_r 1000, d_z 300, d_a 100, two layers.
    pub fn full_size(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 300,
            encoder_dim: 1000,
            intention_dim: 300,
            decoder_dim: 1000,
            attention_dim: 100,
            layers: 2,
            use_similarity_feature: true,
        }
    }

    /// Small dimensions that train on one CPU core in minutes.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            encoder_dim: 64,
            intention_dim: 32,
            decoder_dim: 64,
            attention_dim: 32,
            layers: 2,
            use_similarity_feature: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("encoder_dim", self.encoder_dim),
            ("intention_dim", self.intention_dim),
            ("decoder_dim", self.decoder_dim),
            ("attention_dim", self.attention_dim),
            ("layers", self.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Mismatch {
                    field: name.into(),
                    expected: ">= 1".into(),
                    found: "0".into(),
                });
            }
        }
        Ok(())
    }

    /// Width of generation layer `l`; the top layer spans the vocabulary.
    fn generation_width(&self, l: usize) -> usize {
        if l + 1 == self.layers {
            self.vocab_size
        } else {
            self.decoder_dim
        }
    }
}

/// Parameter shapes in registration order, with the fan-in used for
/// initialization (`None` for zero-initialized biases).
pub(crate) fn layout(c: &AwiConfig) -> Vec<(String, Vec<usize>, Option<usize>)> {
    let (v, de, dx, dz, dr, da) = (
        c.vocab_size,
        c.embed_dim,
        c.encoder_dim,
        c.intention_dim,
        c.decoder_dim,
        c.attention_dim,
    );
    let mut out: Vec<(String, Vec<usize>, Option<usize>)> = Vec::new();
    let mut w = |name: String, shape: Vec<usize>, fan: Option<usize>| out.push((name, shape, fan));
    // Lookup tables read one row per word, so their scale follows the row width.
    w("embedding".into(), vec![v, de], Some(de));
    w("encoder.w1".into(), vec![dx, 2 * de], Some(2 * de));
    w("encoder.b1".into(), vec![dx], None);
    w("encoder.w2".into(), vec![dx, dx], Some(dx));
    w("encoder.b2".into(), vec![dx], None);
    for l in 0..c.layers {
        let input = if l == 0 { dx } else { dz };
        w(format!("intention.{l}.recurrent"), vec![dz, dz], Some(dz));
        w(format!("intention.{l}.input"), vec![dz, input], Some(input));
    }
    for l in 0..c.layers {
        w(format!("decoder.{l}.init"), vec![dr, dz], Some(dz));
        w(format!("decoder.{l}.init_bias"), vec![dr], None);
    }
    // Row w of word_input is column w of the one-hot input matrix.
    w("decoder.word_input".into(), vec![v, dr], Some(dr));
    w("decoder.response_input".into(), vec![dr, v], Some(v));
    for l in 0..c.layers {
        w(format!("decoder.{l}.recurrent"), vec![dr, dr], Some(dr));
        if l > 0 {
            w(format!("decoder.{l}.input"), vec![dr, dr], Some(dr));
        }
    }
    w("attention.query".into(), vec![da, dr], Some(dr));
    w("attention.key".into(), vec![da, de], Some(de));
    w("attention.score".into(), vec![da], Some(da));
    for l in 0..c.layers {
        let input = if l == 0 {
            dr
        } else {
            c.generation_width(l - 1)
        };
        w(
            format!("generation.{l}.hidden"),
            vec![c.generation_width(l), input],
            Some(input),
        );
    }
    w(
        "generation.context".into(),
        vec![c.generation_width(0), de],
        Some(de),
    );
    w("generation.bias".into(), vec![v], None);
    if c.use_similarity_feature {
        // Row w holds the projection of input word w (column w of P).
        w("similarity".into(), vec![v, v], Some(v));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamIds {
    pub embedding: ParamId,
    pub enc_w1: ParamId,
    pub enc_b1: ParamId,
    pub enc_w2: ParamId,
    pub enc_b2: ParamId,
    pub int_recurrent: Vec<ParamId>,
    pub int_input: Vec<ParamId>,
    pub init_w: Vec<ParamId>,
    pub init_b: Vec<ParamId>,
    pub word_input: ParamId,
    pub response_input: ParamId,
    pub dec_recurrent: Vec<ParamId>,
    pub dec_input: Vec<ParamId>,
    pub att_query: ParamId,
    pub att_key: ParamId,
    pub att_score: ParamId,
    pub gen_hidden: Vec<ParamId>,
    pub gen_context: ParamId,
    pub gen_bias: ParamId,
    pub similarity: Option<ParamId>,
}

impl ParamIds {
    fn resolve<T: Scalar>(c: &AwiConfig, ps: &ParamStore<T>) -> Result<Self, ModelError> {
        let get = |name: &str| {
            ps.find(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))
        };
        let per_layer =
            |fmt: &dyn Fn(usize) -> String, from: usize| -> Result<Vec<ParamId>, ModelError> {
                (from..c.layers).map(|l| get(&fmt(l))).collect()
            };
        Ok(Self {
            embedding: get("embedding")?,
            enc_w1: get("encoder.w1")?,
            enc_b1: get("encoder.b1")?,
            enc_w2: get("encoder.w2")?,
            enc_b2: get("encoder.b2")?,
            int_recurrent: per_layer(&|l| format!("intention.{l}.recurrent"), 0)?,
            int_input: per_layer(&|l| format!("intention.{l}.input"), 0)?,
            init_w: per_layer(&|l| format!("decoder.{l}.init"), 0)?,
            init_b: per_layer(&|l| format!("decoder.{l}.init_bias"), 0)?,
            word_input: get("decoder.word_input")?,
            response_input: get("decoder.response_input")?,
            dec_recurrent: per_layer(&|l| format!("decoder.{l}.recurrent"), 0)?,
            dec_input: per_layer(&|l| format!("decoder.{l}.input"), 1)?,
            att_query: get("attention.query")?,
            att_key: get("attention.key")?,
            att_score: get("attention.score")?,
            gen_hidden: per_layer(&|l| format!("generation.{l}.hidden"), 0)?,
            gen_context: get("generation.context")?,
            gen_bias: get("generation.bias")?,
            similarity: if c.use_similarity_feature {
                Some(get("similarity")?)
            } else {
                None
            },
        })
    }
}

/// Model configuration plus every named weight.
#[derive(Clone, Debug, PartialEq)]
pub struct AwiModel<T: Scalar = f32> {
    config: AwiConfig,
    params: ParamStore<T>,
    pub(crate) ids: ParamIds,
}

impl<T: Scalar> AwiModel<T> {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new(config: AwiConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fan) in layout(&config) {
            let n: usize = shape.iter().product();
            let data = match fan {
                Some(f) => {
                    let a = 1.0 / (f as f64).sqrt();
                    (0..n).map(|_| T::of(rng.gen_range(-a..=a))).collect()
                }
                None => vec![T::zero(); n],
            };
            params.push(name, Tensor::new(shape, data)?);
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter store, checking names and shapes.
    pub fn from_params(config: AwiConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Mismatch {
                field: "parameter count".into(),
                expected: expected.len().to_string(),
                found: params.len().to_string(),
            });
        }
        for (name, shape, _) in &expected {
            let id = params
                .find(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(ModelError::Mismatch {
                    field: name.clone(),
                    expected: format!("{shape:?}"),
                    found: format!("{:?}", params.get(id).shape()),
                });
            }
        }
        let ids = ParamIds::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &AwiConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.find(name)
    }

    pub fn embedding_id(&self) -> ParamId {
        self.ids.embedding
    }

    /// Same model with every weight converted to another precision.
    pub fn cast<U: Scalar>(&self) -> AwiModel<U> {
        AwiModel {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }
}

/// Per-dialogue intention vectors, one per layer, plus the turn index.
#[derive(Clone, Debug, PartialEq)]
pub struct AwiState<T: Scalar = f32> {
    pub intention: Vec<Tensor<T>>,
    pub turn: usize,
}

impl<T: Scalar> AwiState<T> {
    /// The state before the first turn: all intention vectors zero.
    pub fn new(config: &AwiConfig) -> Self {
        Self {
            intention: (0..config.layers)
                .map(|_| Tensor::zeros(&[config.intention_dim]))
                .collect(),
            turn: 0,
        }
    }

    /// Top-layer intention vector.
    pub fn top(&self) -> &Tensor<T> {
        self.intention.last().expect("at least one layer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_bounded_by_inverse_sqrt_fan_in() {
        let c = AwiConfig::desk(50);
        let m = AwiModel::<f32>::new(c.clone(), 1).unwrap();
        for (name, shape, fan) in layout(&c) {
            let t = m.params().get(m.param_id(&name).unwrap());
            assert_eq!(t.shape(), shape.as_slice());
            match fan {
                Some(f) => assert!(t.data().iter().all(|x| x.abs() <= 1.0 / (f as f32).sqrt())),
                None => assert!(t.data().iter().all(|x| *x == 0.0)),
            }
        }
    }

    #[test]
    fn similarity_matrix_is_gated() {
        let mut c = AwiConfig::desk(20);
        c.use_similarity_feature = false;
        let m = AwiModel::<f32>::new(c, 1).unwrap();
        assert!(m.param_id("similarity").is_none());
    }

    #[test]
    fn fresh_state_is_zero() {
        let c = AwiConfig::desk(20);
        let s = AwiState::<f32>::new(&c);
        assert_eq!(s.intention.len(), c.layers);
        assert!(s
            .intention
            .iter()
            .all(|t| t.data().iter().all(|x| *x == 0.0)));
        assert_eq!(s.turn, 0);
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut c = AwiConfig::desk(20);
        c.attention_dim = 0;
        assert!(AwiModel::<f32>::new(c, 0).is_err());
    }
}
