//! Symmetric InfoNCE over unit-norm embeddings and the regime objectives
//! built from it.
//!
//! For a batch of `B` matched pairs `(aᵢ, bᵢ)` the logits are
//! `Lᵢⱼ = aᵢ·bⱼ / τ`. The loss averages the cross-entropy of picking the
//! diagonal entry along rows (a→b retrieval) and along columns (b→a):
//!
//! ```text
//! loss = ½ · [ meanᵢ (lse(Lᵢ,·) − Lᵢᵢ) + meanᵢ (lse(L·,ᵢ) − Lᵢᵢ) ]
//! ∂loss/∂Lᵢⱼ = (P_rowᵢⱼ + P_colᵢⱼ − 2δᵢⱼ) / 2B
//! ```
//!
//! where `P_row` / `P_col` are the row- and column-wise softmaxes. The
//! embedding gradients follow as `G·b / τ` and `Gᵀ·a / τ`.

use crate::data::TriBatch;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::TrimodalAligner;
use crate::regime::{Pair, Regime, Stage};

#[derive(Clone, Debug, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

/// Composite objective of one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeLoss {
    pub total: f64,
    pub av: Option<PairLoss>,
    pub at: Option<PairLoss>,
    pub vt: Option<PairLoss>,
}

impl RegimeLoss {
    pub fn component(&self, pair: Pair) -> Option<&PairLoss> {
        match pair {
            Pair::AudioVisual => self.av.as_ref(),
            Pair::AudioText => self.at.as_ref(),
            Pair::VisualText => self.vt.as_ref(),
        }
    }

    /// Present terms in summation order.
    pub fn pairs(&self) -> Vec<Pair> {
        Pair::ALL
            .into_iter()
            .filter(|p| self.component(*p).is_some())
            .collect()
    }

    /// Component value, if present.
    pub fn value(&self, pair: Pair) -> Option<f64> {
        self.component(pair).map(|c| c.value)
    }
}

pub fn similarity_logits(a: &Matrix, b: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyInput("similarity_logits needs a nonempty batch"));
    }
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "similarity_logits",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut logits = a.matmul_nt(b)?;
    logits.scale(1.0 / temperature);
    Ok(logits)
}

/// `lse(row) − row[diag]` for every row, and the row softmax.
fn row_terms(logits: &Matrix) -> (Vec<f64>, Matrix) {
    let n = logits.rows();
    let mut terms = Vec::with_capacity(n);
    let mut probs = Matrix::zeros(n, logits.cols());
    for i in 0..n {
        let row = logits.row(i);
        let arg = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        let max = row[arg];
        let p = probs.row_mut(i);
        // the max term contributes exactly 1; ln_1p keeps tiny losses exact
        let mut rest = 0.0;
        for (j, (pj, &l)) in p.iter_mut().zip(row).enumerate() {
            *pj = (l - max).exp();
            if j != arg {
                rest += *pj;
            }
        }
        let sum = 1.0 + rest;
        for pj in p.iter_mut() {
            *pj /= sum;
        }
        terms.push((max - row[i]) + rest.ln_1p());
    }
    (terms, probs)
}

fn check_square(logits: &Matrix) -> Result<()> {
    if logits.rows() != logits.cols() {
        return Err(Error::Shape {
            op: "info_nce",
            left: logits.shape(),
            right: (logits.cols(), logits.rows()),
        });
    }
    if logits.rows() == 0 {
        return Err(Error::EmptyInput("info_nce needs at least one pair"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric InfoNCE of a square logit matrix whose diagonal holds the
/// positives.
pub fn info_nce(logits: &Matrix) -> Result<f64> {
    check_square(logits)?;
    let (rows, _) = row_terms(logits);
    let (cols, _) = row_terms(&logits.transpose());
    Ok(0.5 * (mean(&rows) + mean(&cols)))
}

/// InfoNCE of `(a, b)` with gradients with respect to both (unit-norm)
/// embedding matrices.
pub fn info_nce_grad(a: &Matrix, b: &Matrix, temperature: f64) -> Result<PairLoss> {
    let logits = similarity_logits(a, b, temperature)?;
    let n = logits.rows();
    let (row_loss, p_row) = row_terms(&logits);
    let (col_loss, p_col_t) = row_terms(&logits.transpose());
    let value = 0.5 * (mean(&row_loss) + mean(&col_loss));

    // dL/dlogits
    let scale = 1.0 / (2.0 * n as f64);
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 2.0 } else { 0.0 };
            g.set(i, j, (p_row.get(i, j) + p_col_t.get(j, i) - delta) * scale);
        }
    }
    let mut grad_a = g.matmul(b)?;
    grad_a.scale(1.0 / temperature);
    let mut grad_b = g.matmul_tn(a)?;
    grad_b.scale(1.0 / temperature);
    Ok(PairLoss {
        value,
        grad_a,
        grad_b,
    })
}

/// Evaluates the regime's objective on an embedded minibatch.
pub fn regime_loss(
    batch: &TriBatch,
    aligner: &TrimodalAligner,
    regime: Regime,
    stage: Stage,
) -> Result<RegimeLoss> {
    let pairs = regime.objective(stage, batch.caption_type)?;
    let tau = aligner.temperature;
    let mut out = RegimeLoss {
        total: 0.0,
        av: None,
        at: None,
        vt: None,
    };
    for pair in pairs {
        let loss = match pair {
            Pair::AudioVisual => info_nce_grad(batch.audio()?, batch.visual()?, tau)?,
            Pair::AudioText => info_nce_grad(batch.audio()?, batch.text()?, tau)?,
            Pair::VisualText => info_nce_grad(batch.visual()?, batch.text()?, tau)?,
        };
        match pair {
            Pair::AudioVisual => out.av = Some(loss),
            Pair::AudioText => out.at = Some(loss),
            Pair::VisualText => out.vt = Some(loss),
        }
    }
    out.total = Pair::ALL.iter().filter_map(|p| out.value(*p)).sum();
    Ok(out)
}
