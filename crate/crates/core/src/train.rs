//! Training orchestration.
//!
//! The backward pass chains the embedding-level InfoNCE gradient through the
//! three forward steps of every modality:
//!
//! * normalization `u = p/‖p‖`: `∂L/∂p = (g − u(u·g)) / ‖p‖`
//! * time pooling over `M` rows: each projected row receives `∂L/∂p / M`
//! * projection `y = xW + b`: `∂L/∂W = Xᵀ·∂L/∂Y`, `∂L/∂b = Σ_rows ∂L/∂Y`

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{make_batches, BatchPlan, CaptionType, Dataset, DatasetDims, TriBatch};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{regime_loss, RegimeLoss};
use crate::model::{init_aligner, AlignerConfig, BatchEmbedding, HeadKind, ProjectionHead, TrimodalAligner};
use crate::optim::{AdamWConfig, AdamWState};
use crate::regime::{Pair, Regime, Stage, TrainableHeads};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub bias: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub out_dim: usize,
    /// Keep the epoch with the lowest validation loss when a validation set
    /// is supplied.
    pub select_on_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            epochs: 20,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            batch_size: 32,
            temperature: crate::model::DEFAULT_TEMPERATURE,
            seed: 0,
            bias: false,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            out_dim: crate::model::SHARED_DIM,
            select_on_validation: false,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn aligner_config(&self, dims: DatasetDims) -> AlignerConfig {
        AlignerConfig {
            visual_in: dims.visual_dim,
            audio_in: dims.audio_dim,
            text_in: dims.text_dim,
            out_dim: self.out_dim,
            bias: self.bias,
            temperature: self.temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        self.adamw().validate()
    }

    /// Short hash of the full resolved configuration.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        crate::data::hex16(&Sha256::digest(text.as_bytes()))
    }

    /// `key=value` lines, one per field, sorted by key.
    pub fn to_key_values(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                out.push_str(&format!("{k}={v}\n"));
            }
        }
        out
    }
}

/// AdamW states for one head.
#[derive(Clone, Debug)]
pub struct HeadOptimizer {
    pub weight: AdamWState,
    pub bias: AdamWState,
}

impl HeadOptimizer {
    pub fn new(head: &ProjectionHead, config: AdamWConfig) -> Self {
        Self {
            weight: AdamWState::new(head.weight.as_slice().len(), config),
            bias: AdamWState::new(head.bias.len(), config),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerSet {
    pub visual: HeadOptimizer,
    pub audio: HeadOptimizer,
    pub text: HeadOptimizer,
}

impl OptimizerSet {
    pub fn new(aligner: &TrimodalAligner, config: AdamWConfig) -> Self {
        Self {
            visual: HeadOptimizer::new(&aligner.visual, config),
            audio: HeadOptimizer::new(&aligner.audio, config),
            text: HeadOptimizer::new(&aligner.text, config),
        }
    }

    fn get_mut(&mut self, kind: HeadKind) -> &mut HeadOptimizer {
        match kind {
            HeadKind::Visual => &mut self.visual,
            HeadKind::Audio => &mut self.audio,
            HeadKind::Text => &mut self.text,
        }
    }
}

/// Gradient of the batch objective with respect to one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradient {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeadGradients {
    pub visual: Option<HeadGradient>,
    pub audio: Option<HeadGradient>,
    pub text: Option<HeadGradient>,
}

impl HeadGradients {
    pub fn get(&self, kind: HeadKind) -> Option<&HeadGradient> {
        match kind {
            HeadKind::Visual => self.visual.as_ref(),
            HeadKind::Audio => self.audio.as_ref(),
            HeadKind::Text => self.text.as_ref(),
        }
    }

    fn slot(&mut self, kind: HeadKind) -> &mut Option<HeadGradient> {
        match kind {
            HeadKind::Visual => &mut self.visual,
            HeadKind::Audio => &mut self.audio,
            HeadKind::Text => &mut self.text,
        }
    }
}

/// Forward state of one modality kept for the backward pass.
struct ModalityForward {
    stacked: Matrix,
    row_counts: Vec<usize>,
    embedding: BatchEmbedding,
}

fn forward_modality(head: &ProjectionHead, inputs: &[&Matrix]) -> Result<ModalityForward> {
    let embedding = head.embed_batch(inputs)?;
    Ok(ModalityForward {
        stacked: Matrix::vstack(inputs)?,
        row_counts: inputs.iter().map(|m| m.rows()).collect(),
        embedding,
    })
}

/// Chains `∂L/∂u` (one row per batch item) back to the head parameters.
fn backward_modality(
    fwd: &ModalityForward,
    grad_unit: &Matrix,
    bias_enabled: bool,
) -> Result<HeadGradient> {
    let emb = &fwd.embedding;
    let d = emb.unit.cols();
    let total_rows: usize = fwd.row_counts.iter().sum();
    let mut grad_rows = Matrix::zeros(total_rows, d);
    let mut start = 0;
    for (b, &m) in fwd.row_counts.iter().enumerate() {
        if !emb.degenerate[b] {
            let u = emb.unit.row(b);
            let g = grad_unit.row(b);
            let ug = crate::linalg::dot(u, g);
            let scale = 1.0 / (emb.norms[b] * m as f64);
            let pooled_grad: Vec<f64> = g.iter().zip(u).map(|(gi, ui)| (gi - ui * ug) * scale).collect();
            for r in start..start + m {
                grad_rows.row_mut(r).copy_from_slice(&pooled_grad);
            }
        }
        start += m;
    }
    let weight = fwd.stacked.matmul_tn(&grad_rows)?;
    let mut bias = vec![0.0; d];
    if bias_enabled {
        for r in 0..total_rows {
            for (acc, g) in bias.iter_mut().zip(grad_rows.row(r)) {
                *acc += g;
            }
        }
    }
    Ok(HeadGradient { weight, bias })
}

fn modalities_for(pairs: &[Pair]) -> (bool, bool, bool) {
    let audio = pairs.iter().any(|p| matches!(p, Pair::AudioVisual | Pair::AudioText));
    let visual = pairs.iter().any(|p| matches!(p, Pair::AudioVisual | Pair::VisualText));
    let text = pairs.iter().any(|p| matches!(p, Pair::AudioText | Pair::VisualText));
    (audio, visual, text)
}

struct BatchForward {
    batch: TriBatch,
    audio: Option<ModalityForward>,
    visual: Option<ModalityForward>,
    text: Option<ModalityForward>,
}

fn forward_batch(
    aligner: &TrimodalAligner,
    dataset: &Dataset,
    plan: &BatchPlan,
    regime: Regime,
    stage: Stage,
) -> Result<BatchForward> {
    let pairs = regime.objective(stage, plan.caption_type)?;
    let (need_audio, need_visual, need_text) = modalities_for(&pairs);
    let clips = dataset.clips();
    let audio = if need_audio {
        let xs: Vec<&Matrix> = plan.clip_indices.iter().map(|&c| &clips[c].audio).collect();
        Some(forward_modality(&aligner.audio, &xs)?)
    } else {
        None
    };
    let visual = if need_visual {
        let xs: Vec<&Matrix> = plan.clip_indices.iter().map(|&c| &clips[c].visual).collect();
        Some(forward_modality(&aligner.visual, &xs)?)
    } else {
        None
    };
    let text = if need_text {
        let caps = dataset.caption_inputs(plan)?;
        let refs: Vec<&Matrix> = caps.iter().collect();
        Some(forward_modality(&aligner.text, &refs)?)
    } else {
        None
    };
    let unit = |f: &Option<ModalityForward>| f.as_ref().map(|f| f.embedding.unit.clone());
    let batch = TriBatch {
        clip_ids: dataset.clip_ids(plan),
        audio: unit(&audio),
        visual: unit(&visual),
        text: unit(&text),
        caption_type: plan.caption_type,
    };
    Ok(BatchForward {
        batch,
        audio,
        visual,
        text,
    })
}

/// Embeds a planned minibatch with the aligner's heads.
pub fn embed_batch_plan(
    aligner: &TrimodalAligner,
    dataset: &Dataset,
    plan: &BatchPlan,
    regime: Regime,
    stage: Stage,
) -> Result<TriBatch> {
    Ok(forward_batch(aligner, dataset, plan, regime, stage)?.batch)
}

/// Objective value of a planned minibatch, forward only.
pub fn batch_loss(
    aligner: &TrimodalAligner,
    dataset: &Dataset,
    plan: &BatchPlan,
    regime: Regime,
    stage: Stage,
) -> Result<RegimeLoss> {
    let fwd = forward_batch(aligner, dataset, plan, regime, stage)?;
    regime_loss(&fwd.batch, aligner, regime, stage)
}

/// Objective and parameter gradients for the heads selected by `want`.
/// Heads the objective does not touch get no gradient.
pub fn batch_gradients(
    aligner: &TrimodalAligner,
    dataset: &Dataset,
    plan: &BatchPlan,
    regime: Regime,
    stage: Stage,
    want: TrainableHeads,
) -> Result<(RegimeLoss, HeadGradients)> {
    let fwd = forward_batch(aligner, dataset, plan, regime, stage)?;
    let loss = regime_loss(&fwd.batch, aligner, regime, stage)?;

    // accumulate ∂L/∂u per modality over the terms, in summation order
    let mut g_audio: Option<Matrix> = None;
    let mut g_visual: Option<Matrix> = None;
    let mut g_text: Option<Matrix> = None;
    let add = |slot: &mut Option<Matrix>, g: &Matrix| match slot {
        Some(acc) => acc
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g.clone()),
    };
    for pair in loss.pairs() {
        let pl = loss.component(pair).expect("listed pair is present");
        match pair {
            Pair::AudioVisual => {
                add(&mut g_audio, &pl.grad_a);
                add(&mut g_visual, &pl.grad_b);
            }
            Pair::AudioText => {
                add(&mut g_audio, &pl.grad_a);
                add(&mut g_text, &pl.grad_b);
            }
            Pair::VisualText => {
                add(&mut g_visual, &pl.grad_a);
                add(&mut g_text, &pl.grad_b);
            }
        }
    }

    let mut grads = HeadGradients::default();
    for (kind, wanted, f, g) in [
        (HeadKind::Visual, want.visual, &fwd.visual, &g_visual),
        (HeadKind::Audio, want.audio, &fwd.audio, &g_audio),
        (HeadKind::Text, want.text, &fwd.text, &g_text),
    ] {
        if let (true, Some(f), Some(g)) = (wanted, f, g) {
            *grads.slot(kind) = Some(backward_modality(f, g, aligner.head(kind).bias_enabled)?);
        }
    }
    Ok((loss, grads))
}

/// One optimization step on a planned minibatch. Only heads whose
/// `trainable` flag is set are touched.
pub fn train_step(
    aligner: &mut TrimodalAligner,
    dataset: &Dataset,
    plan: &BatchPlan,
    regime: Regime,
    stage: Stage,
    optims: &mut OptimizerSet,
) -> Result<RegimeLoss> {
    let want = TrainableHeads {
        visual: aligner.visual.trainable,
        audio: aligner.audio.trainable,
        text: aligner.text.trainable,
    };
    let (loss, grads) = batch_gradients(aligner, dataset, plan, regime, stage, want)?;
    if !loss.total.is_finite() {
        return Err(Error::Divergence(format!(
            "loss {} on batch {:?}",
            loss.total,
            dataset.clip_ids(plan)
        )));
    }
    for kind in HeadKind::ALL {
        let Some(g) = grads.get(kind) else { continue };
        let head = aligner.head_mut(kind);
        let opt = optims.get_mut(kind);
        opt.weight
            .step(&format!("{}.weight", kind.name()), head.weight.as_mut_slice(), g.weight.as_slice())?;
        if head.bias_enabled {
            opt.bias.step(&format!("{}.bias", kind.name()), &mut head.bias, &g.bias)?;
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Loss traces

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: Stage,
    pub epoch: usize,
    pub batch: usize,
    pub caption_type: CaptionType,
    pub av: Option<f64>,
    pub at: Option<f64>,
    pub vt: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
    /// Mean validation loss per `(stage, epoch)` when a validation set was used.
    pub validation: Vec<(Stage, usize, f64)>,
}

impl LossTrace {
    /// Mean total loss per epoch of `stage`.
    pub fn epoch_means(&self, stage: Stage) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.stage == stage) {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.total;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("stage,epoch,batch,caption_type,av,at,vt,total\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                stage_name(r.stage),
                r.epoch,
                r.batch,
                r.caption_type.name(),
                opt(r.av),
                opt(r.at),
                opt(r.vt),
                r.total
            ));
        }
        out
    }
}

pub fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Single => "single",
        Stage::VisualText => "stage1",
        Stage::AudioText => "stage2",
    }
}

// ---------------------------------------------------------------------------
// Training loops

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub aligner: TrimodalAligner,
    pub trace: LossTrace,
    /// Aligner at the end of each stage, in stage order.
    pub stage_ends: Vec<TrimodalAligner>,
    /// Epoch kept per stage (the last one unless validation selection ran).
    pub selected_epochs: Vec<usize>,
}

fn stage_index(stage: Stage) -> u64 {
    match stage {
        Stage::Single | Stage::VisualText => 0,
        Stage::AudioText => 1,
    }
}

fn validation_loss(
    aligner: &TrimodalAligner,
    validation: &Dataset,
    config: &TrainConfig,
    regime: Regime,
    stage: Stage,
) -> Result<f64> {
    let policy = regime.caption_policy(stage)?;
    let plans = make_batches(validation, config.batch_size, policy, config.seed, u64::MAX)?;
    if plans.is_empty() {
        return Err(Error::EmptyInput("validation set yields no batches"));
    }
    let mut sum = 0.0;
    for plan in &plans {
        sum += batch_loss(aligner, validation, plan, regime, stage)?.total;
    }
    Ok(sum / plans.len() as f64)
}

fn run_stage(
    aligner: &mut TrimodalAligner,
    dataset: &Dataset,
    config: &TrainConfig,
    regime: Regime,
    stage: Stage,
    validation: Option<&Dataset>,
    trace: &mut LossTrace,
) -> Result<usize> {
    let heads = regime.trainable_heads(stage)?;
    aligner.set_trainable(heads.visual, heads.audio, heads.text);
    let policy = regime.caption_policy(stage)?;
    let mut optims = OptimizerSet::new(aligner, config.adamw());
    let select = config.select_on_validation && validation.is_some();
    let mut best: Option<(f64, usize, TrimodalAligner)> = None;
    for epoch in 0..config.epochs {
        let key = (stage_index(stage) << 32) | epoch as u64;
        let plans = make_batches(dataset, config.batch_size, policy, config.seed, key)?;
        for (b, plan) in plans.iter().enumerate() {
            let loss = train_step(aligner, dataset, plan, regime, stage, &mut optims)?;
            trace.rows.push(TraceRow {
                stage,
                epoch,
                batch: b,
                caption_type: plan.caption_type,
                av: loss.value(Pair::AudioVisual),
                at: loss.value(Pair::AudioText),
                vt: loss.value(Pair::VisualText),
                total: loss.total,
            });
        }
        if let Some(val) = validation {
            let v = validation_loss(aligner, val, config, regime, stage)?;
            trace.validation.push((stage, epoch, v));
            if select && best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, epoch, aligner.clone()));
            }
        }
    }
    match best {
        Some((_, epoch, snapshot)) => {
            *aligner = snapshot;
            Ok(epoch)
        }
        None => Ok(config.epochs.saturating_sub(1)),
    }
}

fn run_regime(
    dataset: &Dataset,
    config: &TrainConfig,
    regime: Regime,
    validation: Option<&Dataset>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some(val) = validation {
        if val.dims() != dataset.dims() {
            return Err(Error::InvalidParameter("validation dims differ from training dims".into()));
        }
    }
    let mut aligner = init_aligner(config.seed, &config.aligner_config(dataset.dims()))?;
    let mut trace = LossTrace::default();
    let mut stage_ends = Vec::new();
    let mut selected_epochs = Vec::new();
    for &stage in regime.stages() {
        let kept = run_stage(&mut aligner, dataset, config, regime, stage, validation, &mut trace)?;
        selected_epochs.push(kept);
        stage_ends.push(aligner.clone());
    }
    aligner.set_trainable(true, true, true);
    Ok(TrainOutcome {
        aligner,
        trace,
        stage_ends,
        selected_epochs,
    })
}

/// Visual-text alignment on visual captions, then audio-text alignment on
/// audio captions, each for `config.epochs`. The text head trains in the
/// second stage unless `frozen_text`.
pub fn train_two_stage(
    dataset: &Dataset,
    config: &TrainConfig,
    frozen_text: bool,
    validation: Option<&Dataset>,
) -> Result<TrainOutcome> {
    run_regime(dataset, config, Regime::TwoStage { frozen_text }, validation)
}

/// Joint training of all three heads under a single-stage regime.
pub fn train_single_stage(
    dataset: &Dataset,
    config: &TrainConfig,
    regime: Regime,
    validation: Option<&Dataset>,
) -> Result<TrainOutcome> {
    if matches!(regime, Regime::TwoStage { .. }) {
        return Err(Error::RegimeMismatch(format!("{regime} is not a single-stage regime")));
    }
    run_regime(dataset, config, regime, validation)
}

/// Dispatches to the one- or two-stage loop.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    regime: Regime,
    validation: Option<&Dataset>,
) -> Result<TrainOutcome> {
    match regime {
        Regime::TwoStage { frozen_text } => train_two_stage(dataset, config, frozen_text, validation),
        _ => train_single_stage(dataset, config, regime, validation),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use crate::regime::CaptionPolicy;

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        gen_synthetic(&SynthConfig {
            n_clips: n,
            shared_dim: 3,
            audio_dim: 2,
            visual_dim: 2,
            rows_per_clip: 3,
            captions_per_type: 2,
            seed,
            dims: DatasetDims {
                audio_dim: 12,
                visual_dim: 10,
                text_dim: 8,
            },
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            out_dim: 8,
            lr: 1e-2,
            temperature: 0.2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn frozen_heads_are_untouched() {
        let ds = toy_dataset(16, 0);
        let cfg = toy_config();
        let mut aligner = init_aligner(0, &cfg.aligner_config(ds.dims())).unwrap();
        aligner.set_trainable(false, false, false);
        let before = aligner.clone();
        let mut optims = OptimizerSet::new(&aligner, cfg.adamw());
        let plan = &make_batches(&ds, 8, CaptionPolicy::Fixed(CaptionType::AudioVisual), 0, 0).unwrap()[0];
        let regime = Regime::SlavaAvCaptions { use_av_loss: true };
        let loss = train_step(&mut aligner, &ds, plan, regime, Stage::Single, &mut optims).unwrap();
        assert!(loss.total > 0.0);
        assert_eq!(aligner, before);
    }

    #[test]
    fn stage_two_with_frozen_text_keeps_text_head() {
        let ds = toy_dataset(16, 1);
        let cfg = toy_config();
        let mut aligner = init_aligner(0, &cfg.aligner_config(ds.dims())).unwrap();
        let regime = Regime::TwoStage { frozen_text: true };
        let h = regime.trainable_heads(Stage::AudioText).unwrap();
        aligner.set_trainable(h.visual, h.audio, h.text);
        let before = aligner.clone();
        let mut optims = OptimizerSet::new(&aligner, cfg.adamw());
        let plan = &make_batches(&ds, 8, CaptionPolicy::Fixed(CaptionType::Audio), 0, 0).unwrap()[0];
        train_step(&mut aligner, &ds, plan, regime, Stage::AudioText, &mut optims).unwrap();
        assert_eq!(aligner.text, before.text);
        assert_eq!(aligner.visual, before.visual);
        assert_ne!(aligner.audio, before.audio);
    }

    #[test]
    fn two_stage_leaves_audio_alone_in_stage_one() {
        let ds = toy_dataset(20, 2);
        let cfg = toy_config();
        let init = init_aligner(cfg.seed, &cfg.aligner_config(ds.dims())).unwrap();
        let out = train_two_stage(&ds, &cfg, true, None).unwrap();
        assert_eq!(out.stage_ends[0].audio.weight, init.audio.weight);
        assert_eq!(out.stage_ends[1].text.weight, out.stage_ends[0].text.weight);
        assert_ne!(out.stage_ends[1].audio.weight, init.audio.weight);
        let trainable = train_two_stage(&ds, &cfg, false, None).unwrap();
        assert_ne!(trainable.stage_ends[1].text.weight, trainable.stage_ends[0].text.weight);
    }

    #[test]
    fn two_loss_regime_logs_at_and_vt_only() {
        let ds = toy_dataset(20, 3);
        let out = train_single_stage(&ds, &toy_config(), Regime::SlavaAvCaptions { use_av_loss: false }, None)
            .unwrap();
        for r in &out.trace.rows {
            assert!(r.av.is_none() && r.at.is_some() && r.vt.is_some());
        }
    }

    #[test]
    fn mixed_regime_is_reproducible() {
        let ds = toy_dataset(24, 4);
        let a = train(&ds, &toy_config(), Regime::SlavaMixed, None).unwrap();
        let b = train(&ds, &toy_config(), Regime::SlavaMixed, None).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.aligner, b.aligner);
        let types: Vec<_> = a.trace.rows.iter().map(|r| r.caption_type).collect();
        assert!(types.contains(&CaptionType::Audio) && types.contains(&CaptionType::Visual));
    }

    #[test]
    fn loss_decreases_on_toy_data() {
        let ds = toy_dataset(32, 5);
        let cfg = TrainConfig {
            epochs: 10,
            ..toy_config()
        };
        let out = train_single_stage(&ds, &cfg, Regime::SlavaAvCaptions { use_av_loss: true }, None).unwrap();
        let means = out.trace.epoch_means(Stage::Single);
        assert!(means.last().unwrap() < &means[0], "{means:?}");
    }

    #[test]
    fn validation_selection_restores_best_epoch() {
        let ds = toy_dataset(24, 6);
        let val = toy_dataset(16, 7);
        let cfg = TrainConfig {
            select_on_validation: true,
            epochs: 4,
            ..toy_config()
        };
        let out = train_single_stage(&ds, &cfg, Regime::AudioClipStyle, Some(&val)).unwrap();
        let vals: Vec<f64> = out.trace.validation.iter().map(|v| v.2).collect();
        let best = vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(out.selected_epochs, vec![best]);
        assert_eq!(vals.len(), 4);
    }

    #[test]
    fn two_stage_is_not_single_stage() {
        let ds = toy_dataset(8, 0);
        assert!(train_single_stage(&ds, &toy_config(), Regime::TwoStage { frozen_text: true }, None).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let ds = toy_dataset(16, 8);
        let out = train(&ds, &toy_config(), Regime::SlavaMixed, None).unwrap();
        let csv = out.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("stage,epoch,batch,caption_type,av,at,vt,total"));
        assert_eq!(lines.count(), out.trace.rows.len());
    }

    #[test]
    fn config_key_values_list_every_field() {
        let kv = TrainConfig::default().to_key_values();
        assert!(kv.contains("epochs=20\n"));
        assert!(kv.contains("lr=1e-5\n") || kv.contains("lr=0.00001\n"), "{kv}");
        assert!(kv.contains("weight_decay=0.1\n"));
    }
}
