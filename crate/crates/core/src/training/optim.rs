use crate::error::{Error, Result};

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Argument(format!("step {step} is past the schedule end {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(lr0);
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.02,
        }
    }
}

/// Moments and step count of the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AdamState {
    pub fn new(params: usize) -> Self {
        AdamState {
            step: 0,
            first: vec![0.0; params],
            second: vec![0.0; params],
        }
    }
}

/// One decoupled-decay Adam update in place.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, opt: &AdamW) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first.len() != n || state.second.len() != n {
        return Err(Error::Dimension {
            op: "adamw_step",
            left: vec![n],
            right: vec![grads.len(), state.first.len(), state.second.len()],
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = opt.beta1 * state.first[i] + (1.0 - opt.beta1) * g;
        let v = opt.beta2 * state.second[i] + (1.0 - opt.beta2) * g * g;
        state.first[i] = m;
        state.second[i] = v;
        let p = params[i] * (1.0 - lr * opt.weight_decay);
        params[i] = p - lr * (m / c1) / ((v / c2).sqrt() + opt.eps);
    }
    Ok(())
}
