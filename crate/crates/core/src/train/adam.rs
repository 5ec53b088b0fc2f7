use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<S: Scalar>(params: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut Gradients<S>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm {
        grads.scale(S::of(max_norm / norm));
    }
    norm
}

/// Bias-corrected Adam update of all trainable parameters after optional
/// global-norm clipping. Parameters without a gradient see a zero gradient.
/// Moments are kept in f64 whatever the parameter precision.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &mut Gradients<S>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64> {
    if let Some(id) = grads.first_non_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient in parameter `{}`",
            params.name(id)
        )));
    }
    let norm = match cfg.clip_norm {
        Some(max) => clip_global_norm(grads, max),
        None => grads.global_norm().as_f64(),
    };
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if !params.is_trainable(id) {
            continue;
        }
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let g = grads.dense(id);
        let values = params.get_mut(id).data_mut();
        for i in 0..values.len() {
            let gi = g.as_ref().map_or(0.0, |g| g[i].as_f64());
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let update = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            values[i] = S::of(values[i].as_f64() - update);
        }
    }
    Ok(norm)
}
