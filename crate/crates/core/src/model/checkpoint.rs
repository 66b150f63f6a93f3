//! Binary checkpoint: `AWI1` magic line, a text header, then raw
//! little-endian `f32` tensors in directory order.
//!
//! ```text
//! AWI1
//! config {"vocab_size":...}
//! vocab_checksum 3f2a...
//! tensor embedding 500x32 0 64000
//! ...
//! end
//! <bytes>
//! ```
//! Offsets and lengths are in bytes from the first byte after `end\n`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::{ParamStore, Scalar, Tensor};

use super::{AwiConfig, AwiModel, ModelError};

const MAGIC: &str = "AWI1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config: AwiConfig,
    pub vocab_checksum: String,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &AwiModel<T>,
    vocab_checksum: &str,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    if vocab_checksum.contains(char::is_whitespace) {
        return Err(bad("vocabulary checksum must not contain whitespace"));
    }
    let mut header = format!("{MAGIC}\n");
    let config = serde_json::to_string(model.config()).map_err(|e| bad(e.to_string()))?;
    header.push_str(&format!("config {config}\n"));
    header.push_str(&format!("vocab_checksum {vocab_checksum}\n"));
    let mut offset = 0usize;
    for (_, name, t) in model.params().iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let bytes = t.len() * 4;
        header.push_str(&format!(
            "tensor {name} {} {offset} {bytes}\n",
            shape.join("x")
        ));
        offset += bytes;
    }
    header.push_str("end\n");

    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    w.write_all(header.as_bytes()).map_err(io(path))?;
    for (_, _, t) in model.params().iter() {
        for x in t.data() {
            w.write_all(&(x.as_f64() as f32).to_le_bytes())
                .map_err(io(path))?;
        }
    }
    w.flush().map_err(io(path))
}

/// Reads a checkpoint written by [`save_checkpoint`]. When
/// `expected_vocab_checksum` is given it must match the stored one.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected_vocab_checksum: Option<&str>,
) -> Result<(AwiModel<f32>, CheckpointMeta), ModelError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(io(path))?);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String, ModelError> {
        line.clear();
        if r.read_line(&mut line).map_err(io(path))? == 0 {
            return Err(bad("truncated header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };

    if next_line(&mut r)? != MAGIC {
        return Err(bad("missing AWI1 magic"));
    }
    let config_line = next_line(&mut r)?;
    let config: AwiConfig = serde_json::from_str(
        config_line
            .strip_prefix("config ")
            .ok_or_else(|| bad("expected config line"))?,
    )
    .map_err(|e| bad(format!("config: {e}")))?;
    let checksum = next_line(&mut r)?
        .strip_prefix("vocab_checksum ")
        .ok_or_else(|| bad("expected vocab_checksum line"))?
        .to_string();
    if let Some(expected) = expected_vocab_checksum {
        if expected != checksum {
            return Err(ModelError::Mismatch {
                field: "vocab_checksum".into(),
                expected: expected.into(),
                found: checksum,
            });
        }
    }

    let mut directory = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        let f: Vec<&str> = l.split(' ').collect();
        if f.len() != 5 || f[0] != "tensor" {
            return Err(bad(format!("bad directory line `{l}`")));
        }
        let shape = f[2]
            .split('x')
            .map(str::parse::<usize>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad shape in `{l}`")))?;
        let offset: usize = f[3]
            .parse()
            .map_err(|_| bad(format!("bad offset in `{l}`")))?;
        let len: usize = f[4]
            .parse()
            .map_err(|_| bad(format!("bad length in `{l}`")))?;
        if len != shape.iter().product::<usize>() * 4 {
            return Err(bad(format!("length does not match shape in `{l}`")));
        }
        directory.push((f[1].to_string(), shape, offset, len));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io(path))?;
    let mut params = ParamStore::new();
    for (name, shape, offset, len) in directory {
        let bytes = payload
            .get(offset..offset + len)
            .ok_or_else(|| bad(format!("tensor `{name}` extends past end of file")))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("tensor `{name}` holds non-finite values")));
        }
        params.push(name, Tensor::new(shape, data)?);
    }
    let model = AwiModel::from_params(config.clone(), params)?;
    Ok((
        model,
        CheckpointMeta {
            config,
            vocab_checksum: checksum,
        },
    ))
}
