use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Objective;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective value per target token (per turn for ranking).
    pub train_loss: f64,
    pub dev_perplexity: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_generated_idf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_margin: Option<f64>,
    pub skipped_turns: usize,
}

impl EpochRecord {
    pub(super) fn new(epoch: usize, learning_rate: f64) -> Self {
        Self {
            epoch,
            train_loss: 0.0,
            dev_perplexity: 0.0,
            learning_rate,
            mean_generated_idf: None,
            mean_margin: None,
            skipped_turns: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective: Objective,
    pub initial_dev_perplexity: f64,
    /// Reinforcement baseline actually used (0 for other objectives).
    pub baseline: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = the starting parameters).
    pub best_epoch: usize,
    pub best_dev_perplexity: f64,
}

impl TrainReport {
    pub(super) fn new(objective: Objective, initial_dev_perplexity: f64, baseline: f64) -> Self {
        Self {
            objective,
            initial_dev_perplexity,
            baseline,
            epochs: Vec::new(),
            best_epoch: 0,
            best_dev_perplexity: initial_dev_perplexity,
        }
    }

    pub(super) fn push(&mut self, rec: EpochRecord) {
        self.epochs.push(rec);
    }

    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("records serialize") + "\n")
            .collect()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let obj = serde_json::to_string(&self.objective).expect("objective serializes");
        let _ = writeln!(s, "objective {}", obj.trim_matches('"'));
        let _ = writeln!(s, "epochs {}", self.epochs.len());
        let _ = writeln!(
            s,
            "initial dev perplexity {:.4}",
            self.initial_dev_perplexity
        );
        for e in &self.epochs {
            let _ = write!(
                s,
                "epoch {:>3}  loss {:.4}  dev ppl {:.4}  lr {:.3e}",
                e.epoch, e.train_loss, e.dev_perplexity, e.learning_rate
            );
            if let Some(v) = e.mean_generated_idf {
                let _ = write!(s, "  idf {v:.4}");
            }
            if let Some(v) = e.mean_margin {
                let _ = write!(s, "  margin {v:.4}");
            }
            if e.skipped_turns > 0 {
                let _ = write!(s, "  skipped {}", e.skipped_turns);
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "kept epoch {} (dev ppl {:.4})",
            self.best_epoch, self.best_dev_perplexity
        );
        s
    }
}
