use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{io_err, CorpusError, Vocabulary, RESERVED};
use crate::tensor::{Scalar, Tensor};

/// Copies pretrained vectors (`token v1 ... vd` per line) into the rows of
/// `matrix` for in-vocabulary tokens. Rows for tokens missing from the file
/// keep their current values. Returns the fraction of non-reserved vocabulary
/// entries that were covered.
pub fn load_embeddings<T: Scalar>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    matrix: &mut Tensor<T>,
) -> Result<f64, CorpusError> {
    let path = path.as_ref();
    let dim = matrix.cols();
    assert_eq!(
        matrix.rows(),
        vocab.len(),
        "embedding rows must match vocabulary"
    );
    let file = File::open(path).map_err(io_err(path))?;

    let mut covered = vec![false; vocab.len()];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad float: {e}"),
            })?;
        if values.len() != dim {
            return Err(CorpusError::DimensionMismatch {
                line: i + 1,
                expected: dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "non-finite value".into(),
            });
        }
        if !vocab.contains(token) {
            continue;
        }
        let id = vocab.id(token);
        if Vocabulary::is_reserved(id) {
            continue;
        }
        for (dst, v) in matrix.row_mut(id as usize).iter_mut().zip(&values) {
            *dst = T::of(*v);
        }
        covered[id as usize] = true;
    }
    let total = vocab.len() - RESERVED.len();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(covered.iter().filter(|c| **c).count() as f64 / total as f64)
}
