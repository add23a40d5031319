//! Cross entropy and focal loss.
//!
//! In sigmoid mode every channel is its own two-class problem, so the
//! negative class `(1 - y, 1 - ŷ)` contributes the mirrored term.

use super::{LossResult, ProbLoss};
use crate::error::Result;
use crate::tensor::{Activation, OneHotMask, Tensor4};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
fn clamp(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

fn normalizer(yhat: &Tensor4, activation: Activation) -> f64 {
    let s = yhat.shape();
    match activation {
        Activation::Softmax => (s.batch * s.plane()) as f64,
        Activation::Sigmoid => s.len() as f64,
    }
}

/// Applies a per-element term `(value, d/dp)` of the positive class, and in
/// sigmoid mode the mirrored term of the negative class.
fn pixelwise(yhat: &Tensor4, y: &OneHotMask, scale: f64, term: impl Fn(f64) -> (f64, f64)) -> ProbLoss {
    let activation = y.activation();
    let n = normalizer(yhat, activation);
    let mut grad = Tensor4::zeros(yhat.shape());
    let mut total = 0.0;
    let g = grad.data_mut();
    for (i, (&p, &t)) in yhat.data().iter().zip(y.tensor().data()).enumerate() {
        if t == 1.0 {
            let (pc, clamped) = clamp(p);
            let (v, d) = term(pc);
            total += v;
            if !clamped {
                g[i] = scale * d / n;
            }
        } else if activation == Activation::Sigmoid {
            let (qc, clamped) = clamp(1.0 - p);
            let (v, d) = term(qc);
            total += v;
            if !clamped {
                g[i] = -scale * d / n;
            }
        }
    }
    ProbLoss {
        value: scale * total / n,
        grad,
    }
}

pub(crate) fn cross_entropy(yhat: &Tensor4, y: &OneHotMask) -> ProbLoss {
    pixelwise(yhat, y, 1.0, |p| (-p.ln(), -1.0 / p))
}

pub(crate) fn focal(yhat: &Tensor4, y: &OneHotMask, alpha: f64, gamma: f64) -> ProbLoss {
    pixelwise(yhat, y, alpha, |p| {
        let q = 1.0 - p;
        let value = -q.powf(gamma) * p.ln();
        let modulating = if gamma == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p.ln()
        };
        (value, modulating - q.powf(gamma) / p)
    })
}

/// Mean cross entropy over pixels.
pub fn ce_loss(yhat: &Tensor4, y: &OneHotMask) -> Result<LossResult> {
    yhat.shape().expect("ce_loss", y.shape())?;
    cross_entropy(yhat, y).into_result(yhat, y.activation())
}

/// Focal loss `-(alpha/N) Σ y (1-ŷ)^gamma log ŷ`.
pub fn focal_loss(yhat: &Tensor4, y: &OneHotMask, alpha: f64, gamma: f64) -> Result<LossResult> {
    yhat.shape().expect("focal_loss", y.shape())?;
    focal(yhat, y, alpha, gamma).into_result(yhat, y.activation())
}
