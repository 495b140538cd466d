use super::state::{CalibrationState, NUM_PARAMS};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one per parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamMoments {
    pub m: [f64; NUM_PARAMS],
    pub v: [f64; NUM_PARAMS],
}

impl Default for AdamMoments {
    fn default() -> Self {
        Self {
            m: [0.0; NUM_PARAMS],
            v: [0.0; NUM_PARAMS],
        }
    }
}

/// Step size at `step`: `lr0` halved every `halve_every` steps.
pub fn scheduled_lr(lr0: f64, halve_every: usize, step: usize) -> f64 {
    let halvings = step / halve_every.max(1);
    lr0 * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
}

/// One bias-corrected Adam update. `step_index` counts from 0.
pub fn adam_step(
    state: &CalibrationState,
    gradient: &[f64; NUM_PARAMS],
    moments: &AdamMoments,
    step_index: usize,
    lr: f64,
) -> (CalibrationState, AdamMoments) {
    let (params, moments) = adam_step_scaled(
        &state.to_params(),
        gradient,
        moments,
        step_index,
        lr,
        &[1.0; NUM_PARAMS],
    );
    (CalibrationState::from_params(&params), moments)
}

/// Adam on the rescaled coordinates `u = theta / scale`. The moments live
/// in `u`-space.
pub fn adam_step_scaled(
    params: &[f64; NUM_PARAMS],
    gradient: &[f64; NUM_PARAMS],
    moments: &AdamMoments,
    step_index: usize,
    lr: f64,
    scale: &[f64; NUM_PARAMS],
) -> ([f64; NUM_PARAMS], AdamMoments) {
    let t = (step_index + 1) as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let mut out = *params;
    let mut next = *moments;
    for i in 0..NUM_PARAMS {
        let g = gradient[i] * scale[i];
        next.m[i] = BETA1 * moments.m[i] + (1.0 - BETA1) * g;
        next.v[i] = BETA2 * moments.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = next.m[i] / c1;
        let v_hat = next.v[i] / c2;
        out[i] -= scale[i] * lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    (out, next)
}
