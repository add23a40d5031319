//! Soft Dice and Tversky losses, macro-averaged over all channels.
//!
//! Sums run over the whole batch, so every pixel's gradient depends on the
//! global per-class intersection and union.

use super::{class_sum, LossResult, ProbLoss};
use crate::error::Result;
use crate::tensor::{OneHotMask, Tensor4};

/// Sets every gradient entry of channel `k` to `f(y)`.
fn fill_class(grad: &mut Tensor4, y: &Tensor4, k: usize, f: impl Fn(f64) -> f64) {
    let s = grad.shape();
    for b in 0..s.batch {
        let labels = y.plane(b, k);
        for (g, &t) in grad.plane_mut(b, k).iter_mut().zip(labels) {
            *g = f(t);
        }
    }
}

pub(crate) fn dice(yhat: &Tensor4, y: &OneHotMask, smooth: f64) -> ProbLoss {
    let yt = y.tensor();
    let classes = yhat.shape().channels;
    let c = classes as f64;
    let mut grad = Tensor4::zeros(yhat.shape());
    let mut score = 0.0;
    for k in 0..classes {
        let inter = class_sum(yhat, k, |i, p| p * yt.data()[i]);
        let union = class_sum(yhat, k, |_, p| p) + class_sum(yt, k, |_, t| t);
        let den = union + smooth;
        let num = 2.0 * inter + smooth;
        score += num / den;
        fill_class(&mut grad, yt, k, |t| -(2.0 * t * den - num) / (c * den * den));
    }
    ProbLoss {
        value: 1.0 - score / c,
        grad,
    }
}

pub(crate) fn tversky(yhat: &Tensor4, y: &OneHotMask, beta: f64, smooth: f64) -> ProbLoss {
    let alpha = 1.0 - beta;
    let yt = y.tensor();
    let classes = yhat.shape().channels;
    let c = classes as f64;
    let mut grad = Tensor4::zeros(yhat.shape());
    let mut score = 0.0;
    for k in 0..classes {
        let tp = class_sum(yhat, k, |i, p| p * yt.data()[i]);
        let pred = class_sum(yhat, k, |_, p| p);
        let truth = class_sum(yt, k, |_, t| t);
        let fp = pred - tp;
        let fn_ = truth - tp;
        let num = tp + smooth;
        let den = tp + alpha * fp + beta * fn_ + smooth;
        score += num / den;
        // ∂den/∂ŷ = y + alpha (1 - y) - beta y
        fill_class(&mut grad, yt, k, |t| {
            let dden = t + alpha * (1.0 - t) - beta * t;
            -(t * den - num * dden) / (c * den * den)
        });
    }
    ProbLoss {
        value: 1.0 - score / c,
        grad,
    }
}

/// `1 - (1/C) Σ_k (2A_k + ε)/(B_k + ε)` with `A_k` the soft intersection and
/// `B_k` the sum of prediction and ground-truth mass.
pub fn dice_loss(yhat: &Tensor4, y: &OneHotMask, smooth: f64) -> Result<LossResult> {
    yhat.shape().expect("dice_loss", y.shape())?;
    dice(yhat, y, smooth).into_result(yhat, y.activation())
}

pub fn tversky_loss(yhat: &Tensor4, y: &OneHotMask, beta: f64, smooth: f64) -> Result<LossResult> {
    yhat.shape().expect("tversky_loss", y.shape())?;
    tversky(yhat, y, beta, smooth).into_result(yhat, y.activation())
}
