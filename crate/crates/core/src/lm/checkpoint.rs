//! Checkpoint files: one JSON header line, then the raw little-endian `f64`
//! parameter blob in layout order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use super::params::Parameters;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "xlingual-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_fingerprint: String,
    pub seed: u64,
    pub n_params: usize,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        vocab_fingerprint: model.vocab_fingerprint().into(),
        seed: model.seed(),
        n_params: model.params().len(),
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    buf.reserve(model.params().len() * 8);
    for x in &model.params().0 {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 1,
        reason,
    };
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| malformed(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: format!("{}/{}", header.format, header.version),
            expected: format!("{CHECKPOINT_FORMAT}/{CHECKPOINT_VERSION}"),
        });
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    if blob.len() != header.n_params * 8 {
        return Err(Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 2,
            reason: format!(
                "parameter blob holds {} bytes, header promises {}",
                blob.len(),
                header.n_params * 8
            ),
        });
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Model::from_parameters(header.config, Parameters(params), header.vocab_fingerprint, header.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::new(ModelConfig::desk_transformer(14), "fp", 9).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(back.vocab_fingerprint(), "fp");
        let a = m.forward_logprob(&[0, 5, 6], &[7, 1]).unwrap();
        let b = back.forward_logprob(&[0, 5, 6], &[7, 1]).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::new(ModelConfig::bigram(6, 8), "fp", 1).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::MalformedRecord { line: 2, .. })));
    }
}
