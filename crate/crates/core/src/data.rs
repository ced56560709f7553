//! Clip-level datasets of precomputed encoder outputs.
//!
//! On disk a dataset is a directory holding `meta.json`, a `manifest.jsonl`
//! index and raw little-endian `f32` blobs (`audio.f32`, `visual.f32`,
//! `text.f32`). Every manifest line points at a `(blob, offset, byte_len)`
//! range holding a row-major `rows × cols` matrix.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::regime::CaptionPolicy;
use crate::rng;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionType {
    Audio,
    Visual,
    AudioVisual,
}

impl CaptionType {
    pub const ALL: [CaptionType; 3] = [CaptionType::Audio, CaptionType::Visual, CaptionType::AudioVisual];

    pub fn name(self) -> &'static str {
        match self {
            CaptionType::Audio => "audio",
            CaptionType::Visual => "visual",
            CaptionType::AudioVisual => "audio_visual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub clip_id: String,
    pub modality: Modality,
    /// `rows × dim`: one row per video frame or audio chunk.
    pub features: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub clip_id: String,
    pub caption_type: CaptionType,
    pub caption_index: usize,
    pub text_embedding: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDims {
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub text_dim: usize,
}

impl Default for DatasetDims {
    fn default() -> Self {
        Self {
            audio_dim: 768,
            visual_dim: 768,
            text_dim: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub audio: Matrix,
    pub visual: Matrix,
    /// Sorted by `(caption_type, caption_index)`.
    pub captions: Vec<CaptionRecord>,
}

impl Clip {
    pub fn captions_of(&self, caption_type: CaptionType) -> impl Iterator<Item = &CaptionRecord> {
        self.captions.iter().filter(move |c| c.caption_type == caption_type)
    }

    pub fn caption_count(&self, caption_type: CaptionType) -> usize {
        self.captions_of(caption_type).count()
    }
}

/// An immutable, validated collection of clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dims: DatasetDims,
    clips: Vec<Clip>,
}

impl Dataset {
    /// Assembles a dataset from loose records. Clip order follows the first
    /// appearance of each clip among `records`.
    pub fn new(
        dims: DatasetDims,
        records: Vec<EmbeddingRecord>,
        captions: Vec<CaptionRecord>,
    ) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut audio: HashMap<String, Matrix> = HashMap::new();
        let mut visual: HashMap<String, Matrix> = HashMap::new();
        for rec in records {
            let dim = match rec.modality {
                Modality::Audio => dims.audio_dim,
                Modality::Visual => dims.visual_dim,
            };
            if rec.features.rows() == 0 {
                return Err(Error::InvalidParameter(format!(
                    "clip {} has an empty {:?} record",
                    rec.clip_id, rec.modality
                )));
            }
            if rec.features.cols() != dim {
                return Err(Error::Shape {
                    op: "dataset record",
                    left: rec.features.shape(),
                    right: (rec.features.rows(), dim),
                });
            }
            if !audio.contains_key(&rec.clip_id) && !visual.contains_key(&rec.clip_id) {
                order.push(rec.clip_id.clone());
            }
            let slot = match rec.modality {
                Modality::Audio => &mut audio,
                Modality::Visual => &mut visual,
            };
            if slot.insert(rec.clip_id.clone(), rec.features).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "clip {} has two {:?} records",
                    rec.clip_id, rec.modality
                )));
            }
        }
        let mut by_clip: HashMap<String, Vec<CaptionRecord>> = HashMap::new();
        for cap in captions {
            if cap.text_embedding.len() != dims.text_dim {
                return Err(Error::Shape {
                    op: "caption record",
                    left: (1, cap.text_embedding.len()),
                    right: (1, dims.text_dim),
                });
            }
            if let Some(v) = cap.text_embedding.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("caption of {}: {v}", cap.clip_id)));
            }
            if !audio.contains_key(&cap.clip_id) && !visual.contains_key(&cap.clip_id) {
                return Err(Error::InvalidParameter(format!(
                    "caption references unknown clip {}",
                    cap.clip_id
                )));
            }
            by_clip.entry(cap.clip_id.clone()).or_default().push(cap);
        }
        let mut clips = Vec::with_capacity(order.len());
        for id in order {
            let (Some(a), Some(v)) = (audio.remove(&id), visual.remove(&id)) else {
                return Err(Error::InvalidParameter(format!(
                    "clip {id} needs both audio and visual records"
                )));
            };
            let mut captions = by_clip.remove(&id).unwrap_or_default();
            captions.sort_by_key(|c| (c.caption_type, c.caption_index));
            if captions
                .windows(2)
                .any(|w| (w[0].caption_type, w[0].caption_index) == (w[1].caption_type, w[1].caption_index))
            {
                return Err(Error::InvalidParameter(format!(
                    "clip {id} has a duplicated caption index"
                )));
            }
            clips.push(Clip {
                id,
                audio: a,
                visual: v,
                captions,
            });
        }
        Ok(Self { dims, clips })
    }

    pub fn dims(&self) -> DatasetDims {
        self.dims
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn has_caption_type(&self, caption_type: CaptionType) -> bool {
        self.clips.iter().any(|c| c.caption_count(caption_type) > 0)
    }

    /// Clips `range` as a dataset of its own.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            dims: self.dims,
            clips: self.clips[range].to_vec(),
        }
    }

    /// SHA-256 over ids and `f32` values in canonical order, hex-truncated.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |m: &[f64]| {
            for v in m {
                h.update((*v as f32).to_le_bytes());
            }
        };
        let mut ids = Sha256::new();
        for clip in &self.clips {
            ids.update(clip.id.as_bytes());
            ids.update([0]);
            put(clip.audio.as_slice());
            put(clip.visual.as_slice());
            for c in &clip.captions {
                put(&c.text_embedding);
            }
        }
        h.update(ids.finalize());
        hex16(&h.finalize())
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Serialize, Deserialize)]
struct MetaJson {
    format_version: u32,
    audio_dim: usize,
    visual_dim: usize,
    text_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntryKind {
    Audio,
    Visual,
    Caption,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    clip_id: String,
    kind: EntryKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    caption_type: Option<CaptionType>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    caption_index: Option<usize>,
    rows: usize,
    cols: usize,
    blob: String,
    offset: u64,
    byte_len: u64,
}

struct BlobWriter {
    name: &'static str,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            bytes: Vec::new(),
        }
    }

    fn push(&mut self, values: &[f64]) -> (String, u64, u64) {
        let offset = self.bytes.len() as u64;
        for v in values {
            self.bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        (self.name.to_string(), offset, values.len() as u64 * 4)
    }
}

/// Writes `dataset` into `dir` (created if missing). Existing files of the
/// same names are replaced.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut audio = BlobWriter::new("audio.f32");
    let mut visual = BlobWriter::new("visual.f32");
    let mut text = BlobWriter::new("text.f32");
    let mut manifest = String::new();
    let mut line = |entry: ManifestEntry| {
        manifest.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
        manifest.push('\n');
    };
    for clip in &dataset.clips {
        for (kind, m, blob) in [
            (EntryKind::Audio, &clip.audio, &mut audio),
            (EntryKind::Visual, &clip.visual, &mut visual),
        ] {
            let (name, offset, byte_len) = blob.push(m.as_slice());
            line(ManifestEntry {
                clip_id: clip.id.clone(),
                kind,
                caption_type: None,
                caption_index: None,
                rows: m.rows(),
                cols: m.cols(),
                blob: name,
                offset,
                byte_len,
            });
        }
        for cap in &clip.captions {
            let (name, offset, byte_len) = text.push(&cap.text_embedding);
            line(ManifestEntry {
                clip_id: clip.id.clone(),
                kind: EntryKind::Caption,
                caption_type: Some(cap.caption_type),
                caption_index: Some(cap.caption_index),
                rows: 1,
                cols: cap.text_embedding.len(),
                blob: name,
                offset,
                byte_len,
            });
        }
    }
    let meta = MetaJson {
        format_version: FORMAT_VERSION,
        audio_dim: dataset.dims.audio_dim,
        visual_dim: dataset.dims.visual_dim,
        text_dim: dataset.dims.text_dim,
    };
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    for blob in [&audio, &visual, &text] {
        write(blob.name, &blob.bytes)?;
    }
    write(MANIFEST_FILE, manifest.as_bytes())?;
    let mut meta_text = serde_json::to_string(&meta).expect("meta serializes");
    meta_text.push('\n');
    write(META_FILE, meta_text.as_bytes())
}

fn read_meta(dir: &Path) -> Result<DatasetDims> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(&path, format!("line {}", e.line()), e.to_string()))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Version {
                found: v as u32,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(Error::format(&path, "line 1", "missing format_version")),
    }
    let meta: MetaJson = serde_json::from_value(value)
        .map_err(|e| Error::format(&path, "line 1", e.to_string()))?;
    Ok(DatasetDims {
        audio_dim: meta.audio_dim,
        visual_dim: meta.visual_dim,
        text_dim: meta.text_dim,
    })
}

fn check_blob_name(manifest: &Path, lineno: usize, blob: &str) -> Result<()> {
    let p = Path::new(blob);
    let ok = !blob.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(())
    } else {
        Err(Error::format(
            manifest,
            format!("line {lineno}"),
            format!("blob path {blob:?} must be relative and stay inside the dataset"),
        ))
    }
}

/// Loads and validates a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let dims = read_meta(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut records = Vec::new();
    let mut captions = Vec::new();
    let mut clip_ids: HashSet<String> = HashSet::new();
    let mut caption_lines: Vec<(usize, String)> = Vec::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {lineno}");
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(&manifest_path, &loc, e.to_string()))?;
        let expected_cols = match entry.kind {
            EntryKind::Audio => dims.audio_dim,
            EntryKind::Visual => dims.visual_dim,
            EntryKind::Caption => dims.text_dim,
        };
        if entry.cols != expected_cols {
            return Err(Error::format(
                &manifest_path,
                &loc,
                format!(
                    "{:?} record has {} columns but meta.json declares {}",
                    entry.kind, entry.cols, expected_cols
                ),
            ));
        }
        if entry.rows == 0 {
            return Err(Error::format(&manifest_path, &loc, "record has zero rows"));
        }
        let want_len = (entry.rows * entry.cols * 4) as u64;
        if entry.byte_len != want_len {
            return Err(Error::format(
                &manifest_path,
                &loc,
                format!(
                    "byte_len {} does not match rows × cols × 4 = {want_len}",
                    entry.byte_len
                ),
            ));
        }
        check_blob_name(&manifest_path, lineno, &entry.blob)?;
        if !blobs.contains_key(&entry.blob) {
            let path = dir.join(&entry.blob);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            blobs.insert(entry.blob.clone(), bytes);
        }
        let bytes = &blobs[&entry.blob];
        let end = entry.offset.checked_add(entry.byte_len).unwrap_or(u64::MAX);
        if end > bytes.len() as u64 {
            return Err(Error::format(
                dir.join(&entry.blob),
                format!("byte offset {}", entry.offset),
                format!(
                    "truncated blob: record needs bytes {}..{end} but file holds {} bytes",
                    entry.offset,
                    bytes.len()
                ),
            ));
        }
        let slice = &bytes[entry.offset as usize..end as usize];
        let mut values = Vec::with_capacity(entry.rows * entry.cols);
        for (k, chunk) in slice.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(Error::format(
                    dir.join(&entry.blob),
                    format!("byte offset {}", entry.offset + 4 * k as u64),
                    "non-finite value",
                ));
            }
            values.push(v as f64);
        }
        match entry.kind {
            EntryKind::Audio | EntryKind::Visual => {
                let modality = if matches!(entry.kind, EntryKind::Audio) {
                    Modality::Audio
                } else {
                    Modality::Visual
                };
                clip_ids.insert(entry.clip_id.clone());
                records.push(EmbeddingRecord {
                    clip_id: entry.clip_id,
                    modality,
                    features: Matrix::from_vec(entry.rows, entry.cols, values)?,
                });
            }
            EntryKind::Caption => {
                let (Some(caption_type), Some(caption_index)) = (entry.caption_type, entry.caption_index)
                else {
                    return Err(Error::format(
                        &manifest_path,
                        &loc,
                        "caption records need caption_type and caption_index",
                    ));
                };
                if entry.rows != 1 {
                    return Err(Error::format(&manifest_path, &loc, "caption records hold one row"));
                }
                caption_lines.push((lineno, entry.clip_id.clone()));
                captions.push(CaptionRecord {
                    clip_id: entry.clip_id,
                    caption_type,
                    caption_index,
                    text_embedding: values,
                });
            }
        }
    }
    if let Some((lineno, id)) = caption_lines.iter().find(|(_, id)| !clip_ids.contains(id)) {
        return Err(Error::format(
            &manifest_path,
            format!("line {lineno}"),
            format!("caption references clip {id} which has no audio/visual records"),
        ));
    }
    Dataset::new(dims, records, captions)
}

// ---------------------------------------------------------------------------
// Batching

/// Which clips and captions form one minibatch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub clip_indices: Vec<usize>,
    pub caption_type: CaptionType,
    /// Position among the clip's captions of `caption_type`, per item.
    pub caption_choice: Vec<usize>,
}

/// Embedded minibatch: row `i` of every matrix belongs to clip `clip_ids[i]`.
/// A modality the active objective does not use may be left out.
#[derive(Clone, Debug, PartialEq)]
pub struct TriBatch {
    pub clip_ids: Vec<String>,
    pub audio: Option<Matrix>,
    pub visual: Option<Matrix>,
    pub text: Option<Matrix>,
    pub caption_type: CaptionType,
}

impl TriBatch {
    fn side<'a>(&self, m: &'a Option<Matrix>, name: &str) -> Result<&'a Matrix> {
        m.as_ref()
            .ok_or_else(|| Error::RegimeMismatch(format!("batch carries no {name} embeddings")))
    }

    pub fn audio(&self) -> Result<&Matrix> {
        self.side(&self.audio, "audio")
    }

    pub fn visual(&self) -> Result<&Matrix> {
        self.side(&self.visual, "visual")
    }

    pub fn text(&self) -> Result<&Matrix> {
        self.side(&self.text, "text")
    }

    pub fn len(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip_ids.is_empty()
    }
}

/// Clips missing a caption type the policy needs.
fn check_captions(dataset: &Dataset, policy: CaptionPolicy) -> Result<()> {
    let mut problems = Vec::new();
    for t in policy.required_types() {
        let missing: Vec<&str> = dataset
            .clips
            .iter()
            .filter(|c| c.caption_count(*t) == 0)
            .map(|c| c.id.as_str())
            .collect();
        if !missing.is_empty() {
            problems.push(format!("no {} captions for clips {:?}", t.name(), missing));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::RegimeMismatch(problems.join("; ")))
    }
}

/// Deterministic minibatches for one epoch.
///
/// Clips are shuffled by a stream keyed on `(seed, epoch)`. The caption type
/// of batch `b` comes from a stream keyed on `(seed, epoch, b)` and the choice
/// among several captions of that type from `(seed, epoch, clip)`, so the
/// streams do not disturb each other. A final short batch is kept when it has
/// at least two clips and dropped otherwise.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    policy: CaptionPolicy,
    seed: u64,
    epoch: u64,
) -> Result<Vec<BatchPlan>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot batch an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
    }
    check_captions(dataset, policy)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::TAG_SHUFFLE, epoch]));

    let mut plans = Vec::new();
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        if chunk.len() < batch_size && chunk.len() < 2 {
            continue;
        }
        let caption_type = match policy {
            CaptionPolicy::Fixed(t) => t,
            CaptionPolicy::AudioOrVisual => caption_flip(seed, epoch, b as u64),
        };
        let caption_choice = chunk
            .iter()
            .map(|&c| {
                let count = dataset.clips[c].caption_count(caption_type);
                let mut r = rng::stream(
                    seed,
                    &[rng::TAG_CAPTION_PICK, epoch, c as u64, caption_type as u64],
                );
                r.random_range(0..count)
            })
            .collect();
        plans.push(BatchPlan {
            clip_indices: chunk.to_vec(),
            caption_type,
            caption_choice,
        });
    }
    Ok(plans)
}

/// Fair coin between audio and visual captions for batch `batch` of `epoch`.
pub fn caption_flip(seed: u64, epoch: u64, batch: u64) -> CaptionType {
    if rng::stream(seed, &[rng::TAG_CAPTION_FLIP, epoch, batch]).random_bool(0.5) {
        CaptionType::Audio
    } else {
        CaptionType::Visual
    }
}

impl Dataset {
    /// Text inputs of a plan, each a `1 × text_dim` matrix.
    pub fn caption_inputs(&self, plan: &BatchPlan) -> Result<Vec<Matrix>> {
        plan.clip_indices
            .iter()
            .zip(&plan.caption_choice)
            .map(|(&c, &k)| {
                let cap = self.clips[c].captions_of(plan.caption_type).nth(k).ok_or_else(|| {
                    Error::RegimeMismatch(format!(
                        "clip {} has no {} caption #{k}",
                        self.clips[c].id,
                        plan.caption_type.name()
                    ))
                })?;
                Matrix::row_vector(&cap.text_embedding)
            })
            .collect()
    }

    pub fn clip_ids(&self, plan: &BatchPlan) -> Vec<String> {
        plan.clip_indices.iter().map(|&c| self.clips[c].id.clone()).collect()
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Latent-factor generator.
///
/// Each clip draws `z = [z_s, z_a, z_v]` with standard normal entries: a part
/// shared by both media, an audio-only part and a visual-only part. Audio rows
/// are `W_a·[z_s, z_a]`, visual rows `W_v·[z_s, z_v]`.
///
/// Captions come from one text map `T = [T_s | T_a | T_v]`, standing in for a
/// single text encoder: an audio caption is `T_s z_s + T_a z_a`, a visual
/// caption `T_s z_s + T_v z_v` and an audio-visual caption `T z`. The shared
/// content of a clip is therefore phrased the same way in every caption type,
/// while audio captions say nothing about `z_v`. Every value gets independent
/// `N(0, σ²)` noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub shared_dim: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub noise_sigma: f64,
    pub rows_per_clip: usize,
    pub captions_per_type: usize,
    pub seed: u64,
    /// Global index of the first generated clip. Clips are keyed by global
    /// index, so disjoint ranges with the same seed share mixing maps and
    /// never share latents.
    pub first_clip: usize,
    pub dims: DatasetDims,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clips: 512,
            shared_dim: 8,
            audio_dim: 4,
            visual_dim: 4,
            noise_sigma: 0.1,
            rows_per_clip: 4,
            captions_per_type: 1,
            seed: 0,
            first_clip: 0,
            dims: DatasetDims::default(),
        }
    }
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, r: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| std * r.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite samples")
}

/// `map · z + σ·ε`, rounded to `f32`.
fn emit(map: &Matrix, z: &[f64], sigma: f64, r: &mut impl Rng) -> Vec<f64> {
    (0..map.rows())
        .map(|i| {
            let signal = crate::linalg::dot(map.row(i), z);
            let noise: f64 = r.sample(StandardNormal);
            (signal + sigma * noise) as f32 as f64
        })
        .collect()
}

/// The latent a caption type sees: coordinates it does not describe are zeroed.
fn caption_latent(t: CaptionType, z: &[f64], shared: usize, audio_only: usize) -> Vec<f64> {
    let mut out = z.to_vec();
    match t {
        CaptionType::Audio => out[shared + audio_only..].fill(0.0),
        CaptionType::Visual => out[shared..shared + audio_only].fill(0.0),
        CaptionType::AudioVisual => {}
    }
    out
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_clips == 0
        || cfg.shared_dim == 0
        || cfg.audio_dim == 0
        || cfg.visual_dim == 0
        || cfg.rows_per_clip == 0
        || cfg.captions_per_type == 0
    {
        return Err(Error::InvalidParameter("synthetic counts must all be at least 1".into()));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise_sigma must be >= 0, got {}",
            cfg.noise_sigma
        )));
    }
    let (ks, ka, kv) = (cfg.shared_dim, cfg.audio_dim, cfg.visual_dim);
    let total = ks + ka + kv;
    let mut maps = rng::stream(cfg.seed, &[rng::TAG_SYNTH_MAPS]);
    let audio_map = gaussian_matrix(cfg.dims.audio_dim, ks + ka, 1.0 / ((ks + ka) as f64).sqrt(), &mut maps);
    let visual_map = gaussian_matrix(cfg.dims.visual_dim, ks + kv, 1.0 / ((ks + kv) as f64).sqrt(), &mut maps);
    let text_map = gaussian_matrix(cfg.dims.text_dim, total, 1.0 / (total as f64).sqrt(), &mut maps);

    let mut records = Vec::with_capacity(2 * cfg.n_clips);
    let mut captions = Vec::with_capacity(3 * cfg.n_clips * cfg.captions_per_type);
    for j in 0..cfg.n_clips {
        let global = (cfg.first_clip + j) as u64;
        let mut r = rng::stream(cfg.seed, &[rng::TAG_SYNTH_CLIP, global]);
        let z: Vec<f64> = (0..total).map(|_| r.sample(StandardNormal)).collect();
        let za: Vec<f64> = z[..ks + ka].to_vec();
        let zv: Vec<f64> = z[..ks].iter().chain(&z[ks + ka..]).copied().collect();
        let clip_id = format!("clip{global:06}");
        for (modality, map, latent, dim) in [
            (Modality::Audio, &audio_map, &za, cfg.dims.audio_dim),
            (Modality::Visual, &visual_map, &zv, cfg.dims.visual_dim),
        ] {
            let mut data = Vec::with_capacity(cfg.rows_per_clip * dim);
            for _ in 0..cfg.rows_per_clip {
                data.extend(emit(map, latent, cfg.noise_sigma, &mut r));
            }
            records.push(EmbeddingRecord {
                clip_id: clip_id.clone(),
                modality,
                features: Matrix::from_vec(cfg.rows_per_clip, dim, data)?,
            });
        }
        for t in CaptionType::ALL {
            let latent = caption_latent(t, &z, ks, ka);
            for k in 0..cfg.captions_per_type {
                captions.push(CaptionRecord {
                    clip_id: clip_id.clone(),
                    caption_type: t,
                    caption_index: k,
                    text_embedding: emit(&text_map, &latent, cfg.noise_sigma, &mut r),
                });
            }
        }
    }
    Dataset::new(cfg.dims, records, captions)
}

/// Writes `bytes` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
