//! AdamW with a linear-warmup + cosine-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::{GradientVector, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    /// Fraction of `total_steps` spent ramping up, in `[0, 1)`.
    pub warmup_fraction: f64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(peak_lr: f64, warmup_fraction: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup_fraction must lie in [0, 1), got {warmup_fraction}"
            )));
        }
        if !(peak_lr.is_finite() && peak_lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid peak lr {peak_lr}")));
        }
        if total_steps == 0 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        Ok(Schedule {
            peak_lr,
            warmup_fraction,
            total_steps,
        })
    }

    /// Number of ramp steps: `ceil(warmup_fraction · total_steps)`, capped
    /// below `total_steps`.
    pub fn warmup_steps(&self) -> u64 {
        let w = (self.warmup_fraction * self.total_steps as f64).ceil() as u64;
        w.min(self.total_steps - 1)
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total_steps: self.total_steps,
            });
        }
        let warm = self.warmup_steps();
        if step < warm {
            return Ok(self.peak_lr * step as f64 / warm as f64);
        }
        let progress = (step - warm) as f64 / (self.total_steps - warm) as f64;
        Ok(self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub hyper: AdamWConfig,
    pub schedule: Schedule,
}

impl OptimizerState {
    pub fn new(n_params: usize, hyper: AdamWConfig, schedule: Schedule) -> Self {
        OptimizerState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            hyper,
            schedule,
        }
    }
}

/// One decoupled-weight-decay Adam update at `lr_at(state.step)`. Returns the
/// learning rate that was applied.
pub fn adamw_step(
    params: &mut Parameters,
    grads: &GradientVector,
    state: &mut OptimizerState,
) -> Result<f64> {
    let n = params.len();
    for len in [grads.len(), state.m.len(), state.v.len()] {
        if len != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    if grads.0.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let lr = state.schedule.lr_at(state.step)?;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.hyper;
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..n {
        let g = grads.0[i];
        let p = &mut params.0[i];
        *p -= lr * weight_decay * *p;
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    state.step += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> Schedule {
        Schedule::new(5e-7, 0.03, 100).unwrap()
    }

    #[test]
    fn schedule_anchor_points() {
        let s = schedule();
        assert_eq!(s.warmup_steps(), 3);
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(3).unwrap(), 5e-7);
        assert!(s.lr_at(100).unwrap().abs() < 1e-18);
        assert!(matches!(s.lr_at(101), Err(Error::StepOutOfRange { .. })));
        let mid = s.lr_at(2).unwrap();
        assert!((mid - 5e-7 * 2.0 / 3.0).abs() < 1e-20);
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let s = Schedule::new(1.0, 0.1, 50).unwrap();
        let lrs: Vec<f64> = (s.warmup_steps()..=50).map(|t| s.lr_at(t).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_warmup() {
        assert!(Schedule::new(1.0, 1.0, 10).is_err());
        assert!(Schedule::new(1.0, -0.1, 10).is_err());
    }

    fn constant(lr: f64) -> Schedule {
        // No warmup and a long horizon keep lr_at(0) == peak.
        Schedule::new(lr, 0.0, 1 << 40).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = Parameters(vec![0.5, -1.5]);
        let mut st = OptimizerState::new(2, AdamWConfig::default(), constant(0.1));
        adamw_step(&mut p, &GradientVector(vec![0.0, 0.0]), &mut st).unwrap();
        assert_eq!(p.0, vec![0.5, -1.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn decay_shrinks_by_lr_times_lambda() {
        let hyper = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = Parameters(vec![2.0, -4.0]);
        let mut st = OptimizerState::new(2, hyper, constant(0.01));
        adamw_step(&mut p, &GradientVector(vec![0.0, 0.0]), &mut st).unwrap();
        let f = 1.0 - 0.01 * 0.1;
        assert!((p.0[0] - 2.0 * f).abs() < 1e-15);
        assert!((p.0[1] + 4.0 * f).abs() < 1e-15);
    }

    #[test]
    fn second_step_matches_hand_computation() {
        // Hand-worked: lr 0.1, β1 0.9, β2 0.999, ε 1e-8, λ 0.01.
        // Step 1, g = (0.5, -2):
        //   m = (0.05, -0.2), v = (2.5e-4, 4e-3)
        //   m̂ = (0.5, -2), v̂ = (0.25, 4) → update = (1, -1)·0.1 (minus ε effects)
        // Step 2, g = (0.1, 1):
        //   m = 0.9·m + 0.1·g = (0.055, -0.08)
        //   v = 0.999·v + 0.001·g² = (2.5975e-4, 4.996e-3)
        //   m̂ = m / 0.19, v̂ = v / 0.001999
        let hyper = AdamWConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut p = Parameters(vec![1.0, 2.0]);
        let mut st = OptimizerState::new(2, hyper, constant(0.1));
        adamw_step(&mut p, &GradientVector(vec![0.5, -2.0]), &mut st).unwrap();
        let p1 = [
            1.0 * (1.0 - 0.001) - 0.1 * 0.5 / (0.5 + 1e-8),
            2.0 * (1.0 - 0.001) - 0.1 * -2.0 / (2.0 + 1e-8),
        ];
        assert!((p.0[0] - p1[0]).abs() < 1e-12);
        assert!((p.0[1] - p1[1]).abs() < 1e-12);

        adamw_step(&mut p, &GradientVector(vec![0.1, 1.0]), &mut st).unwrap();
        let m = [0.055, -0.08];
        let v = [2.5975e-4, 4.996e-3];
        let bc1 = 0.19;
        let bc2 = 1.0 - 0.999f64 * 0.999;
        let expect: Vec<f64> = (0..2)
            .map(|i| p1[i] * (1.0 - 0.001) - 0.1 * (m[i] / bc1) / ((v[i] / bc2).sqrt() + 1e-8))
            .collect();
        assert!((p.0[0] - expect[0]).abs() < 1e-12, "{} vs {}", p.0[0], expect[0]);
        assert!((p.0[1] - expect[1]).abs() < 1e-12, "{} vs {}", p.0[1], expect[1]);
    }

    #[test]
    fn rejects_mismatch_and_nan() {
        let mut p = Parameters(vec![0.0; 2]);
        let mut st = OptimizerState::new(2, AdamWConfig::default(), constant(0.1));
        assert!(matches!(
            adamw_step(&mut p, &GradientVector(vec![0.0; 3]), &mut st),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            adamw_step(&mut p, &GradientVector(vec![f64::NAN, 0.0]), &mut st),
            Err(Error::NonFinite(_))
        ));
    }
}
