use std::f64::consts::PI;

use super::param::Parameter;
use super::Real;

/// Adam hyper-parameters shared by every parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Outcome of a single [`adam_step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient held a non-finite entry; nothing was modified.
    Skipped,
}

/// One bias-corrected Adam update of `param` using its current gradient.
///
/// `step` is the 1-based update count used for bias correction.
pub fn adam_step(param: &mut Parameter, lr: f64, cfg: AdamConfig, step: u64) -> StepOutcome {
    assert!(step >= 1, "adam step count starts at 1");
    if param.grad.iter().any(|g| !g.is_finite()) {
        return StepOutcome::Skipped;
    }
    let t = step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..param.values.len() {
        let g = param.grad[k] as f64;
        let m = cfg.beta1 * param.adam_m[k] as f64 + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * param.adam_v[k] as f64 + (1.0 - cfg.beta2) * g * g;
        param.adam_m[k] = (m as f32).flush();
        param.adam_v[k] = (v as f32).flush();
        let update = lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        debug_assert!(update.is_finite(), "non-finite Adam increment");
        param.values[k] = (param.values[k] as f64 - update) as f32;
    }
    StepOutcome::Applied
}

/// `base_lr * (1 + cos(pi * step / total)) / 2`, with `step` clamped to `total`.
pub fn cosine_decay_lr(base_lr: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let s = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (PI * s).cos())
}

/// Multiplier applied to every group's base learning rate.
pub fn cosine_decay_factor(step: u64, total_steps: u64) -> f64 {
    cosine_decay_lr(1.0, step, total_steps)
}
