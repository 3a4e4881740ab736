use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimization schedule and regularization for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub drop_factor: f64,
    /// Epochs between learning-rate drops.
    pub drop_period: usize,
    /// Coefficient of the squared weight norm added to the loss.
    pub weight_decay: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr0: 5e-4,
            drop_factor: 0.75,
            drop_period: 5,
            weight_decay: 0.004,
            seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let ok = self.epochs >= 1
            && self.batch_size >= 1
            && self.lr0 > 0.0
            && self.lr0.is_finite()
            && self.drop_factor > 0.0
            && self.drop_factor <= 1.0
            && self.drop_period >= 1
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training configuration {self:?}")))
        }
    }
}

/// `lr0 * drop_factor^floor(epoch / drop_period)` for a zero-based epoch.
pub fn lr_at_epoch(tc: &TrainConfig, epoch: usize) -> f64 {
    tc.lr0 * tc.drop_factor.powi((epoch / tc.drop_period.max(1)) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64, cfg: &AdamConfig) {
    assert!(
        params.len() == grads.len() && params.len() == state.m.len() && params.len() == state.v.len(),
        "Adam buffers differ in length"
    );
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let step = T::of(lr / (1.0 - cfg.beta1.powi(t)));
    let v_corr = T::of(1.0 / (1.0 - cfg.beta2.powi(t)));
    let eps = T::of(cfg.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        *p = *p - step * *m / ((*v * v_corr).sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_every_period() {
        let tc = TrainConfig::new(0);
        for e in 0..5 {
            assert_eq!(lr_at_epoch(&tc, e), 5e-4);
        }
        assert!((lr_at_epoch(&tc, 5) - 3.75e-4).abs() < 1e-18);
        assert!((lr_at_epoch(&tc, 10) - 2.8125e-4).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(0).validate().is_ok());
        for f in [
            |t: &mut TrainConfig| t.lr0 = 0.0,
            |t: &mut TrainConfig| t.drop_factor = 1.5,
            |t: &mut TrainConfig| t.drop_factor = 0.0,
            |t: &mut TrainConfig| t.drop_period = 0,
            |t: &mut TrainConfig| t.weight_decay = -1.0,
            |t: &mut TrainConfig| t.batch_size = 0,
        ] {
            let mut tc = TrainConfig::new(0);
            f(&mut tc);
            assert!(tc.validate().is_err());
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 5e-4, &cfg);
        assert_eq!(s.t, 1);
        let expected = 5e-4 / (1.0 + 1e-8);
        assert!(((1.0 - p[0]) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.3f32, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3, &AdamConfig::default());
        assert_eq!(p, vec![0.3, -2.0]);
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }
}
