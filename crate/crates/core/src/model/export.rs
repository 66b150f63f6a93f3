use std::fmt::Write as _;

use crate::corpus::Dialogue;
use crate::tensor::Scalar;

use super::{AwiModel, AwiState, ModelError};

/// Top-layer intention vector after one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentionRecord {
    pub dialogue_id: String,
    /// 1-based turn index.
    pub turn: usize,
    pub vector: Vec<f64>,
}

impl IntentionRecord {
    /// `id<TAB>turn<TAB>v1 v2 ...`
    pub fn to_line(&self) -> String {
        let mut s = format!("{}\t{}\t", self.dialogue_id, self.turn);
        for (i, v) in self.vector.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v:.6}");
        }
        s
    }
}

/// Runs every dialogue from a fresh state and records the intention vector
/// after each turn.
pub fn export_intention<T: Scalar>(
    model: &AwiModel<T>,
    corpus: &[Dialogue],
) -> Result<Vec<IntentionRecord>, ModelError> {
    let mut out = Vec::new();
    for d in corpus {
        let mut state = AwiState::new(model.config());
        for k in 0..d.turns.len() {
            state = model.advance(&state, &d.turns[k].user, d.previous_response(k))?;
            out.push(IntentionRecord {
                dialogue_id: d.id.clone(),
                turn: k + 1,
                vector: state.top().to_f64_vec(),
            });
        }
    }
    Ok(out)
}
