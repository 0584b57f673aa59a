use crate::autodiff::Matrix;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter array, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .into_iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut EncoderParams, grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    let mut tensors = params.tensors_mut();
    if grads.len() != tensors.len() || state.m.len() != tensors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            tensors.len()
        )));
    }
    for (i, (t, g)) in tensors.iter().zip(grads).enumerate() {
        if t.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                lhs: t.shape(),
                rhs: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
    }
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step as i32);
    let c2 = 1.0 - BETA2.powi(state.step as i32);
    for (i, (t, g)) in tensors.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[i].as_mut_slice(), state.v[i].as_mut_slice());
        for (k, (p, &gk)) in t.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
