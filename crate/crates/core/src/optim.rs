//! AdamW with decoupled weight decay.
//!
//! ```text
//! m ← β₁·m + (1 − β₁)·g
//! v ← β₂·v + (1 − β₂)·g²
//! m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//! θ ← θ − lr·( m̂ / (√v̂ + ε) + λ·θ )
//! ```
//!
//! The decay term uses the parameter value from before the step and never
//! enters the moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite())
            || !in_unit(self.beta1)
            || !in_unit(self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::InvalidParameter(format!("bad AdamW settings: {self:?}")));
        }
        Ok(())
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamWState {
    pub fn new(len: usize, config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update of `params` in place. `name` labels the tensor in errors.
    /// Nothing is modified when an error is returned.
    pub fn step(&mut self, name: &str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adamw_step",
                left: (params.len(), 1),
                right: (grads.len(), 1),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient {} at {name}[{i}]",
                grads[i]
            )));
        }
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn null_update_keeps_params() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut s = AdamWState::new(3, cfg);
        let mut p = vec![0.5, -1.25, 3.0];
        let before = p.clone();
        s.step("w", &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = v̂ = 1 at step 1: w = 1 − 1e-5·(1/(1+1e-8) + 0.1)
        let mut s = AdamWState::new(1, AdamWConfig::default());
        let mut w = [1.0];
        s.step("w", &mut w, &[1.0]).unwrap();
        let want = 1.0 - 1e-5 * (1.0 / (1.0 + 1e-8) + 0.1);
        assert!((w[0] - want).abs() < 1e-15);
        assert!((w[0] - 0.999989).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = AdamWState::new(2, AdamWConfig::default());
        let mut p = [1.0, 2.0];
        let err = s.step("audio.weight", &mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(&err, Error::Divergence(m) if m.contains("audio.weight[1]")), "{err}");
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamWState::new(2, AdamWConfig::default());
        assert!(matches!(
            s.step("w", &mut [1.0, 2.0], &[1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn decay_is_not_fed_into_moments() {
        let mut s = AdamWState::new(1, AdamWConfig::default());
        let mut w = [5.0];
        s.step("w", &mut w, &[0.0]).unwrap();
        assert_eq!(s.m, vec![0.0]);
        assert_eq!(s.v, vec![0.0]);
        assert!((w[0] - 5.0 * (1.0 - 1e-6)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn zero_grad_zero_decay_is_fixed_point(p0 in proptest::collection::vec(-10.0f64..10.0, 1..8), steps in 1usize..30) {
            let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
            let mut s = AdamWState::new(p0.len(), cfg);
            let mut p = p0.clone();
            for _ in 0..steps {
                s.step("p", &mut p, &vec![0.0; p0.len()]).unwrap();
            }
            prop_assert_eq!(p, p0);
        }

        #[test]
        fn pure_decay_shrinks_magnitudes(p0 in proptest::collection::vec(0.1f64..10.0, 1..8), steps in 1usize..20) {
            let cfg = AdamWConfig { lr: 1e-2, ..AdamWConfig::default() };
            let mut s = AdamWState::new(p0.len(), cfg);
            let mut p = p0.clone();
            for _ in 0..steps {
                let before = p.clone();
                s.step("p", &mut p, &vec![0.0; p0.len()]).unwrap();
                for (a, b) in p.iter().zip(&before) {
                    prop_assert!(a.abs() < b.abs());
                }
            }
        }

        #[test]
        fn identical_runs_are_bitwise_equal(seed in any::<u64>()) {
            let grads: Vec<f64> = (0..16).map(|i| ((seed.wrapping_add(i) % 97) as f64 - 48.0) / 10.0).collect();
            let run = || {
                let mut s = AdamWState::new(4, AdamWConfig::default());
                let mut p = vec![0.3, -0.2, 0.1, 0.9];
                for g in grads.chunks(4) {
                    s.step("p", &mut p, g).unwrap();
                }
                p
            };
            prop_assert_eq!(run(), run());
        }
    }
}
