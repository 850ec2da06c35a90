//! Binary checkpoints and plain-text embedding import.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic      8 bytes  "GLOSSEDT"
//! version    u32      currently 1
//! config     u32 length + UTF-8 `key=value` text
//! vocabulary u32 length + UTF-8, one regular token per line
//! tensors    u32 count, then per tensor:
//!            u32 name length + UTF-8 name, u32 rows, u32 cols,
//!            rows·cols f64 values (little-endian, row-major)
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use glossedit_core::corpus::Vocabulary;

use crate::config::{Config, ConfigError};
use crate::model::Glossifier;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"GLOSSEDT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: not a checkpoint (bad magic bytes)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {version}")]
    Version { path: String, version: u32 },
    #[error("{path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{path}:{line}: {reason}")]
    Embedding { path: String, line: usize, reason: String },
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Serializes the model, its training config and the vocabulary.
pub fn to_bytes(model: &Glossifier, config: &Config, vocab: &Vocabulary) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = Config { model: model.config().clone(), train: config.train.clone() };
    put_str(&mut out, &cfg.to_text());
    put_str(&mut out, &vocab.to_file_string());
    let params = model.params();
    put_u32(&mut out, params.len() as u32);
    for (name, m) in params.names().iter().zip(params.values()) {
        put_str(&mut out, name);
        put_u32(&mut out, m.rows() as u32);
        put_u32(&mut out, m.cols() as u32);
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(path: &Path, model: &Glossifier, config: &Config, vocab: &Vocabulary) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&to_bytes(model, config, vocab)).map_err(io)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Corrupt { path: self.path.into(), reason: "unexpected end of file".into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        let path = self.path.to_string();
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt { path, reason: "invalid UTF-8 text".into() })
    }
}

/// Restores a model, its config and vocabulary.
pub fn from_bytes(bytes: &[u8], path: &str) -> Result<(Glossifier, Config, Vocabulary), CheckpointError> {
    let corrupt = |reason: String| CheckpointError::Corrupt { path: path.into(), reason };
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(CheckpointError::BadMagic { path: path.into() });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { path: path.into(), version });
    }
    let config = Config::parse(&r.string()?, path).map_err(|source| CheckpointError::Config { path: path.into(), source })?;
    let vocab = Vocabulary::from_file_string(&r.string()?).map_err(corrupt)?;
    if vocab.len() != config.model.vocab_size {
        return Err(corrupt(format!(
            "vocabulary has {} entries but the config says {}",
            vocab.len(),
            config.model.vocab_size
        )));
    }
    let mut model = Glossifier::new(config.model.clone());
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(corrupt(format!("{count} tensors stored, model expects {}", model.params().len())));
    }
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let idx = model.params().index_of(&name).ok_or_else(|| corrupt(format!("unknown tensor {name:?}")))?;
        if model.params().get(idx).shape() != (rows, cols) {
            return Err(corrupt(format!(
                "tensor {name:?} is {rows}x{cols}, expected {:?}",
                model.params().get(idx).shape()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        *model.params_mut().get_mut(idx) = Matrix::from_vec(rows, cols, data);
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after the last tensor".into()));
    }
    Ok((model, config, vocab))
}

pub fn load(path: &Path) -> Result<(Glossifier, Config, Vocabulary), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    from_bytes(&bytes, &path.display().to_string())
}

/// Overwrites token embeddings from text lines of the form
/// `token v1 … v_d`. Tokens missing from `vocab` are skipped. Returns the
/// number of rows replaced.
pub fn load_embeddings(model: &mut Glossifier, vocab: &Vocabulary, text: &str, origin: &str) -> Result<usize, CheckpointError> {
    let d = model.config().d_model;
    let idx = model.params().index_of("tok_emb").expect("token table exists");
    let mut replaced = 0;
    for (i, line) in text.lines().enumerate() {
        let err = |reason: String| CheckpointError::Embedding { path: origin.into(), line: i + 1, reason };
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad number {f:?}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != d {
            return Err(err(format!("expected {d} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        if let Some(id) = vocab.get(token) {
            model.params_mut().get_mut(idx).row_mut(id as usize).copy_from_slice(&values);
            replaced += 1;
        }
    }
    Ok(replaced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn setup() -> (Glossifier, Config, Vocabulary) {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let mut cfg = Config::default();
        cfg.model = ModelConfig {
            d_model: 4,
            num_heads: 2,
            gen_encoder_layers: 1,
            gen_decoder_layers: 1,
            exec_encoder_layers: 1,
            l_max: 8,
            r_max: 3,
            vocab_size: vocab.len(),
            ff_dim: 8,
            dropout: 0.0,
            seed: 3,
        };
        (Glossifier::new(cfg.model.clone()), cfg, vocab)
    }

    #[test]
    fn round_trip_is_exact() {
        let (model, cfg, vocab) = setup();
        let bytes = to_bytes(&model, &cfg, &vocab);
        let (m2, c2, v2) = from_bytes(&bytes, "mem").unwrap();
        assert_eq!(m2.params().values(), model.params().values());
        assert_eq!(c2.model, cfg.model);
        assert_eq!(v2, vocab);
        assert_eq!(to_bytes(&m2, &c2, &v2), bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let (model, cfg, vocab) = setup();
        let bytes = to_bytes(&model, &cfg, &vocab);
        assert!(matches!(from_bytes(b"nonsense", "x"), Err(CheckpointError::BadMagic { .. })));
        let mut v2 = bytes.clone();
        v2[8] = 9;
        assert!(matches!(from_bytes(&v2, "x"), Err(CheckpointError::Version { version: 9, .. })));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3], "x"), Err(CheckpointError::Corrupt { .. })));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(from_bytes(&longer, "x"), Err(CheckpointError::Corrupt { .. })));
    }

    #[test]
    fn embeddings_replace_known_rows() {
        let (mut model, _, vocab) = setup();
        let n = load_embeddings(&mut model, &vocab, "a 1 2 3 4\nzz 0 0 0 0\n\nc 0.5 0.5 0.5 0.5\n", "emb").unwrap();
        assert_eq!(n, 2);
        let table = model.params().get(model.params().index_of("tok_emb").unwrap());
        assert_eq!(table.row(vocab.id("a") as usize), &[1.0, 2.0, 3.0, 4.0]);
        let e = load_embeddings(&mut model, &vocab, "a 1 2\n", "emb").unwrap_err();
        assert_eq!(e.to_string(), "emb:1: expected 4 values, found 2");
    }
}
