//! Adam with bias correction and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Global L2 norm over every entry of every gradient, summed in order.
pub fn global_norm<S: Scalar>(grads: &[Tensor<S>]) -> S {
    grads
        .iter()
        .fold(S::zero(), |acc, g| acc + g.sum_squares())
        .sqrt()
}

/// Rescales all gradients together so their global L2 norm is at most `max_norm`.
///
/// Returns the norm measured before clipping.
pub fn clip_gradients_l2<S: Scalar>(grads: &mut [Tensor<S>], max_norm: S) -> Result<S> {
    if !(max_norm > S::zero()) {
        return Err(Error::InvalidArgument(format!(
            "clip norm must be positive, got {max_norm}"
        )));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let original = grads.to_vec();
        let mut k = max_norm / norm;
        loop {
            for (g, o) in grads.iter_mut().zip(&original) {
                for (v, &x) in g.data_mut().iter_mut().zip(o.data()) {
                    *v = x * k;
                }
            }
            // rounding can leave the result a few ulps above the bound
            if global_norm(grads) <= max_norm {
                break;
            }
            k = k * (S::one() - S::epsilon());
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub t: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Fresh state with the usual defaults (0.9, 0.999, 1e-8) for parameters shaped like `params`.
    pub fn new(params: &[&Tensor<S>]) -> Self {
        Self::with_hyper(
            params,
            S::from_f64_lossy(0.9),
            S::from_f64_lossy(0.999),
            S::from_f64_lossy(1e-8),
        )
    }

    pub fn with_hyper(params: &[&Tensor<S>], beta1: S, beta2: S, eps: S) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>], lr: S) -> Result<()> {
        adam_step(params, grads, self, lr)
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    lr: S,
) -> Result<()> {
    if !(lr > S::zero()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {:?}, grad {:?}, state {:?}", p.shape(), g.shape(), m.shape()),
            ));
        }
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (S::one() - b1) * gi;
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
