//! Projection heads and the trimodal aligner.
//!
//! A modality input is a stack of encoder rows (frames, audio chunks, or a
//! single text embedding). Each row is projected by the head, the projected
//! rows are averaged over time, and the mean is L2-normalized.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, NORM_EPSILON};
use crate::rng;

pub const SHARED_DIM: usize = 512;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Visual,
    Audio,
    Text,
}

impl HeadKind {
    /// Fixed order used by checkpoints and optimizer bookkeeping.
    pub const ALL: [HeadKind; 3] = [HeadKind::Visual, HeadKind::Audio, HeadKind::Text];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Visual => "visual",
            HeadKind::Audio => "audio",
            HeadKind::Text => "text",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignerConfig {
    pub visual_in: usize,
    pub audio_in: usize,
    pub text_in: usize,
    pub out_dim: usize,
    pub bias: bool,
    pub temperature: f64,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        Self {
            visual_in: 768,
            audio_in: 768,
            text_in: SHARED_DIM,
            out_dim: SHARED_DIM,
            bias: false,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl AlignerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.text_in != self.out_dim {
            return Err(Error::InvalidParameter(format!(
                "text head must preserve dimensionality ({} -> {})",
                self.text_in, self.out_dim
            )));
        }
        if [self.visual_in, self.audio_in, self.text_in, self.out_dim].contains(&0) {
            return Err(Error::InvalidParameter("head widths must be nonzero".into()));
        }
        Ok(())
    }

    pub fn in_dim(&self, kind: HeadKind) -> usize {
        match kind {
            HeadKind::Visual => self.visual_in,
            HeadKind::Audio => self.audio_in,
            HeadKind::Text => self.text_in,
        }
    }
}

/// Linear map `x · weight + bias` from an encoder space into the shared space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub weight: Matrix,
    /// Always `out_dim` long; ignored unless `bias_enabled`.
    pub bias: Vec<f64>,
    pub bias_enabled: bool,
    pub trainable: bool,
}

/// Unit-norm embeddings for a batch of inputs, one row per input, with the
/// pre-normalization norms the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEmbedding {
    pub unit: Matrix,
    pub norms: Vec<f64>,
    pub degenerate: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

impl ProjectionHead {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        let out = weight.cols();
        let (bias, bias_enabled) = match bias {
            Some(b) if b.len() != out => {
                return Err(Error::Shape {
                    op: "ProjectionHead::new",
                    left: weight.shape(),
                    right: (1, b.len()),
                })
            }
            Some(b) => (b, true),
            None => (vec![0.0; out], false),
        };
        Ok(Self {
            weight,
            bias,
            bias_enabled,
            trainable: true,
        })
    }

    /// Uniform init in `±1/√in_dim`, bias zero.
    pub fn init(in_dim: usize, out_dim: usize, bias_enabled: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Matrix::from_vec(in_dim, out_dim, data).expect("sampled weights are finite"),
            bias: vec![0.0; out_dim],
            bias_enabled,
            trainable: true,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Projects every row: `x · weight (+ bias)`.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape {
                op: "project",
                left: x.shape(),
                right: self.weight.shape(),
            });
        }
        let mut out = x.matmul(&self.weight)?;
        if self.bias_enabled {
            out.add_row_broadcast(&self.bias)?;
        }
        Ok(out)
    }

    /// Embeds several inputs at once. All rows are projected in one product;
    /// each input's projected rows are then pooled and normalized on their own.
    pub fn embed_batch(&self, inputs: &[&Matrix]) -> Result<BatchEmbedding> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("embed_batch needs at least one input"));
        }
        for x in inputs {
            if x.rows() == 0 {
                return Err(Error::EmptyInput("modality input has no rows"));
            }
        }
        let stacked = Matrix::vstack(inputs)?;
        let projected = self.project(&stacked)?;
        let out = self.out_dim();
        let mut pooled = Matrix::zeros(inputs.len(), out);
        let mut start = 0;
        for (b, x) in inputs.iter().enumerate() {
            let rows = &projected.as_slice()[start * out..(start + x.rows()) * out];
            let block = Matrix::from_vec(x.rows(), out, rows.to_vec())?;
            pooled.row_mut(b).copy_from_slice(&block.mean_pool_rows()?);
            start += x.rows();
        }
        let normalized = pooled.l2_normalize_rows();
        Ok(BatchEmbedding {
            unit: normalized.matrix,
            norms: normalized.norms,
            degenerate: normalized.degenerate,
        })
    }
}

/// Project, pool over time, normalize.
pub fn embed_modality(head: &ProjectionHead, x: &Matrix) -> Result<Embedding> {
    let batch = head.embed_batch(&[x])?;
    Ok(Embedding {
        vector: batch.unit.row(0).to_vec(),
        degenerate: batch.degenerate[0],
    })
}

/// The full trainable state: three heads and the similarity temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimodalAligner {
    pub visual: ProjectionHead,
    pub audio: ProjectionHead,
    pub text: ProjectionHead,
    pub temperature: f64,
}

impl TrimodalAligner {
    pub fn head(&self, kind: HeadKind) -> &ProjectionHead {
        match kind {
            HeadKind::Visual => &self.visual,
            HeadKind::Audio => &self.audio,
            HeadKind::Text => &self.text,
        }
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> &mut ProjectionHead {
        match kind {
            HeadKind::Visual => &mut self.visual,
            HeadKind::Audio => &mut self.audio,
            HeadKind::Text => &mut self.text,
        }
    }

    pub fn config(&self) -> AlignerConfig {
        AlignerConfig {
            visual_in: self.visual.in_dim(),
            audio_in: self.audio.in_dim(),
            text_in: self.text.in_dim(),
            out_dim: self.text.out_dim(),
            bias: self.text.bias_enabled,
            temperature: self.temperature,
        }
    }

    pub fn set_trainable(&mut self, visual: bool, audio: bool, text: bool) {
        self.visual.trainable = visual;
        self.audio.trainable = audio;
        self.text.trainable = text;
    }

    /// Rounds every weight and bias to the nearest `f32`, i.e. what a
    /// checkpoint keeps. The temperature is stored exactly.
    pub fn to_f32_precision(&self) -> Self {
        let mut out = self.clone();
        for kind in HeadKind::ALL {
            let head = out.head_mut(kind);
            for v in head.weight.as_mut_slice().iter_mut().chain(head.bias.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
        out
    }
}

pub fn init_aligner(seed: u64, config: &AlignerConfig) -> Result<TrimodalAligner> {
    config.validate()?;
    let head = |kind: HeadKind, idx: u64| {
        let mut r = rng::stream(seed, &[rng::TAG_HEAD_INIT, idx]);
        ProjectionHead::init(config.in_dim(kind), config.out_dim, config.bias, &mut r)
    };
    Ok(TrimodalAligner {
        visual: head(HeadKind::Visual, 0),
        audio: head(HeadKind::Audio, 1),
        text: head(HeadKind::Text, 2),
        temperature: config.temperature,
    })
}

/// `true` when the embedding is usable for similarity (not degenerate and of
/// unit length up to rounding).
pub fn is_unit(v: &[f64]) -> bool {
    let n = crate::linalg::l2_norm(v);
    n > NORM_EPSILON && (n - 1.0).abs() < 1e-9
}
