//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TMAL"  u32 version  u32 meta_len  meta JSON (meta_len bytes)
//! then for visual, audio, text:
//!     u32 rows  u32 cols  f32 weight[rows*cols]   (row-major)
//!     u32 1     u32 cols  f32 bias[cols]
//! ```
//!
//! Weights are stored as `f32`, so a round trip reproduces
//! [`TrimodalAligner::to_f32_precision`] exactly, and saving a loaded
//! checkpoint reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{AlignerConfig, HeadKind, ProjectionHead, TrimodalAligner};

pub const MAGIC: &[u8; 4] = b"TMAL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub visual_in: usize,
    pub audio_in: usize,
    pub text_in: usize,
    pub out_dim: usize,
    pub temperature: f64,
    pub bias: bool,
    pub regime: String,
    pub config_hash: String,
}

impl CheckpointMeta {
    pub fn new(aligner: &TrimodalAligner, regime: &str, config_hash: &str) -> Self {
        let c = aligner.config();
        Self {
            visual_in: c.visual_in,
            audio_in: c.audio_in,
            text_in: c.text_in,
            out_dim: c.out_dim,
            temperature: c.temperature,
            bias: c.bias,
            regime: regime.to_string(),
            config_hash: config_hash.to_string(),
        }
    }

    fn aligner_config(&self) -> AlignerConfig {
        AlignerConfig {
            visual_in: self.visual_in,
            audio_in: self.audio_in,
            text_in: self.text_in,
            out_dim: self.out_dim,
            bias: self.bias,
            temperature: self.temperature,
        }
    }
}

fn push_blob(out: &mut Vec<u8>, rows: usize, cols: usize, values: &[f64]) {
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(aligner: &TrimodalAligner, meta: &CheckpointMeta) -> Vec<u8> {
    let meta_json = serde_json::to_vec(meta).expect("meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    for kind in HeadKind::ALL {
        let head = aligner.head(kind);
        let (rows, cols) = head.weight.shape();
        push_blob(&mut out, rows, cols, head.weight.as_slice());
        push_blob(&mut out, 1, cols, &head.bias);
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("byte {}", self.pos),
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn blob(&mut self, what: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let (r, c) = (self.u32(what)? as usize, self.u32(what)? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::format(
                self.path,
                what.to_string(),
                format!("shape {r}x{c}, metadata says {rows}x{cols}"),
            ));
        }
        let raw = self.take(rows * cols * 4, what)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} {what}[{i}]", self.path.display())));
        }
        Ok(values)
    }
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<(TrimodalAligner, CheckpointMeta)> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "byte 0", "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::format(path, "metadata", e.to_string()))?;
    let config = meta.aligner_config();
    config.validate()?;
    let mut heads = Vec::new();
    for kind in HeadKind::ALL {
        let rows = config.in_dim(kind);
        let weight = r.blob(&format!("{}.weight", kind.name()), rows, config.out_dim)?;
        let bias = r.blob(&format!("{}.bias", kind.name()), 1, config.out_dim)?;
        let mut head = ProjectionHead::new(Matrix::from_vec(rows, config.out_dim, weight)?, Some(bias))?;
        head.bias_enabled = config.bias;
        heads.push(head);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("byte {}", r.pos),
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let text = heads.pop().expect("three heads");
    let audio = heads.pop().expect("three heads");
    let visual = heads.pop().expect("three heads");
    Ok((
        TrimodalAligner {
            visual,
            audio,
            text,
            temperature: meta.temperature,
        },
        meta,
    ))
}

pub fn save_checkpoint(aligner: &TrimodalAligner, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    crate::data::write_file(path, &encode_checkpoint(aligner, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrimodalAligner, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
