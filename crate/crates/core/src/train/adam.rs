use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
    let shape = |p: &ModelParams| p.slices().iter().map(|s| s.len()).collect::<Vec<_>>();
    let expected = shape(params);
    if shape(grads) != expected || shape(&state.first_moment) != expected || shape(&state.second_moment) != expected {
        return Err(Error::Dimension("Adam state or gradients do not match parameter shapes".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let correct1 = 1.0 - BETA1.powi(t);
    let correct2 = 1.0 - BETA2.powi(t);
    let grad_slices = grads.slices();
    let m_slices = state.first_moment.slices_mut();
    let v_slices = state.second_moment.slices_mut();
    for (((p, g), m), v) in params.slices_mut().into_iter().zip(grad_slices).zip(m_slices).zip(v_slices) {
        for n in 0..p.len() {
            let gn = g[n];
            m[n] = BETA1 * m[n] + (1.0 - BETA1) * gn;
            v[n] = BETA2 * v[n] + (1.0 - BETA2) * gn * gn;
            let m_hat = m[n] / correct1;
            let v_hat = v[n] / correct2;
            p[n] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
