//! Finite-difference checks of the analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, make_batches, DatasetDims, SynthConfig};
use crate::error::Result;
use crate::linalg::{l2_norm, Matrix};
use crate::loss::{info_nce, info_nce_grad, similarity_logits};
use crate::model::{init_aligner, AlignerConfig, HeadKind, TrimodalAligner};
use crate::regime::{Regime, TrainableHeads};
use crate::rng;
use crate::train::{batch_gradients, batch_loss};

pub const FD_STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = l2_norm(analytic).max(l2_norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        l2_norm(&diff) / scale
    }
}

/// Central differences of `f` at every coordinate of `x`.
pub fn numeric_gradient(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(x)?;
        x[i] = orig - h;
        let down = f(x)?;
        x[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn unit_rows(rows: usize, cols: usize, r: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data)
        .expect("finite")
        .l2_normalize_rows()
        .matrix
}

/// Gradient of the pairwise loss with respect to both embedding matrices,
/// treating the embeddings as free variables.
pub fn check_info_nce(r: &mut impl Rng) -> Result<f64> {
    let b = r.random_range(1..=8);
    let d = r.random_range(1..=16);
    let tau = r.random_range(0.05..1.0);
    let a = unit_rows(b, d, r);
    let c = unit_rows(b, d, r);
    let analytic = info_nce_grad(&a, &c, tau)?;
    let mut av = a.as_slice().to_vec();
    let na = numeric_gradient(&mut av, FD_STEP, |x| {
        info_nce(&similarity_logits(&Matrix::from_vec(b, d, x.to_vec())?, &c, tau)?)
    })?;
    let mut cv = c.as_slice().to_vec();
    let nc = numeric_gradient(&mut cv, FD_STEP, |x| {
        info_nce(&similarity_logits(&a, &Matrix::from_vec(b, d, x.to_vec())?, tau)?)
    })?;
    Ok(relative_error(analytic.grad_a.as_slice(), &na).max(relative_error(analytic.grad_b.as_slice(), &nc)))
}

fn perturbed_bias(aligner: &mut TrimodalAligner, r: &mut impl Rng) {
    for kind in HeadKind::ALL {
        for v in &mut aligner.head_mut(kind).bias {
            *v = r.random_range(-0.3..0.3);
        }
    }
}

/// Full training objective (projection, pooling, normalization, composite
/// loss) against every weight and bias entry of the heads it touches.
pub fn check_training_step(r: &mut impl Rng) -> Result<f64> {
    let dims = DatasetDims {
        audio_dim: r.random_range(2..=16),
        visual_dim: r.random_range(2..=16),
        text_dim: r.random_range(2..=16),
    };
    let batch = r.random_range(2..=8);
    let ds = gen_synthetic(&SynthConfig {
        n_clips: batch,
        shared_dim: 2,
        audio_dim: 1,
        visual_dim: 1,
        noise_sigma: 0.3,
        rows_per_clip: r.random_range(1..=4),
        captions_per_type: 2,
        seed: r.random(),
        first_clip: 0,
        dims,
    })?;
    let bias = r.random_bool(0.5);
    let cfg = AlignerConfig {
        visual_in: dims.visual_dim,
        audio_in: dims.audio_dim,
        text_in: dims.text_dim,
        out_dim: dims.text_dim,
        bias,
        temperature: r.random_range(0.05..1.0),
    };
    let mut aligner = init_aligner(r.random(), &cfg)?;
    if bias {
        perturbed_bias(&mut aligner, r);
    }
    let regime = Regime::ALL[r.random_range(0..Regime::ALL.len())];
    let stages = regime.stages();
    let stage = stages[r.random_range(0..stages.len())];
    let plan = make_batches(&ds, batch, regime.caption_policy(stage)?, r.random(), 0)?.remove(0);
    let all = TrainableHeads {
        visual: true,
        audio: true,
        text: true,
    };
    let (_, grads) = batch_gradients(&aligner, &ds, &plan, regime, stage, all)?;

    let mut worst: f64 = 0.0;
    for kind in HeadKind::ALL {
        let Some(g) = grads.get(kind) else { continue };
        let mut w = aligner.head(kind).weight.as_slice().to_vec();
        let nw = numeric_gradient(&mut w, FD_STEP, |x| {
            let mut probe = aligner.clone();
            probe.head_mut(kind).weight.as_mut_slice().copy_from_slice(x);
            Ok(batch_loss(&probe, &ds, &plan, regime, stage)?.total)
        })?;
        worst = worst.max(relative_error(g.weight.as_slice(), &nw));
        if bias {
            let mut bv = aligner.head(kind).bias.clone();
            let nb = numeric_gradient(&mut bv, FD_STEP, |x| {
                let mut probe = aligner.clone();
                probe.head_mut(kind).bias.copy_from_slice(x);
                Ok(batch_loss(&probe, &ds, &plan, regime, stage)?.total)
            })?;
            worst = worst.max(relative_error(&g.bias, &nb));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub seed: u64,
    pub max_error_info_nce: f64,
    pub max_error_training: f64,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_error_info_nce.max(self.max_error_training)
    }
}

/// Runs `trials` random instances of each check.
pub fn run_gradcheck(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        trials,
        seed,
        max_error_info_nce: 0.0,
        max_error_training: 0.0,
    };
    for t in 0..trials as u64 {
        let mut r = rng::stream(seed, &[rng::TAG_GRADCHECK, t]);
        report.max_error_info_nce = report.max_error_info_nce.max(check_info_nce(&mut r)?);
        report.max_error_training = report.max_error_training.max(check_training_step(&mut r)?);
    }
    Ok(report)
}
