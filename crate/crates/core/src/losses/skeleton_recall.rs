//! Skeleton recall: soft recall of the prediction over a tube around the
//! hard ground-truth skeleton.

use super::{class_sum, LossResult, ProbLoss};
use crate::error::Result;
use crate::metrics::{dilate, hard_skeleton, BinaryMask};
use crate::tensor::{OneHotMask, Tensor4};

/// Thinned ground truth dilated by a `(2r+1)`×`(2r+1)` square, per
/// foreground channel. Background channels are left empty. The tube is a
/// constant of the loss and carries no gradient.
pub fn skeleton_tube(y: &OneHotMask, radius: usize) -> Tensor4 {
    let s = y.shape();
    let mut tube = Tensor4::zeros(s);
    for k in y.foreground_channels() {
        for b in 0..s.batch {
            let mask = BinaryMask::from_plane(s.height, s.width, y.tensor().plane(b, k), 0.5);
            let skel = dilate(&hard_skeleton(&mask), 2 * radius + 1);
            for (dst, &on) in tube.plane_mut(b, k).iter_mut().zip(skel.data()) {
                *dst = if on { 1.0 } else { 0.0 };
            }
        }
    }
    tube
}

pub(crate) fn recall(yhat: &Tensor4, y: &OneHotMask, radius: usize, smooth: f64) -> Result<ProbLoss> {
    let tube = skeleton_tube(y, radius);
    let fg = y.foreground_channels();
    let classes = fg.len() as f64;
    let s = yhat.shape();
    let mut grad = Tensor4::zeros(s);
    let mut mean_recall = 0.0;
    for k in fg {
        let hit = class_sum(yhat, k, |i, p| p * tube.data()[i]);
        let total = class_sum(&tube, k, |_, t| t) + smooth;
        mean_recall += (hit + smooth) / total;
        for b in 0..s.batch {
            for (g, &t) in grad.plane_mut(b, k).iter_mut().zip(tube.plane(b, k)) {
                *g = -t / (total * classes);
            }
        }
    }
    Ok(ProbLoss {
        value: 1.0 - mean_recall / classes,
        grad,
    })
}

/// Cross entropy plus `1 - recall` over the skeleton tube.
pub fn skeleton_recall_loss(
    yhat: &Tensor4,
    y: &OneHotMask,
    radius: usize,
    smooth: f64,
) -> Result<LossResult> {
    yhat.shape().expect("skeleton_recall_loss", y.shape())?;
    let ce = super::pixelwise::cross_entropy(yhat, y);
    let r = recall(yhat, y, radius, smooth)?;
    ProbLoss {
        value: ce.value + r.value,
        grad: ce.grad.add(&r.grad)?,
    }
    .into_result(yhat, y.activation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, Shape};

    fn bar() -> OneHotMask {
        let s = Shape::new(1, 1, 9, 9);
        let t = Tensor4::from_fn(s, |_, _, y, x| if (3..6).contains(&y) && (1..8).contains(&x) { 1.0 } else { 0.0 });
        OneHotMask::new(t, Activation::Sigmoid).unwrap()
    }

    #[test]
    fn tube_covers_skeleton_neighborhood() {
        let y = bar();
        let tube = skeleton_tube(&y, 1);
        let skel = skeleton_tube(&y, 0);
        let n_skel = skel.sum();
        assert!(n_skel >= 1.0);
        assert!(tube.sum() > n_skel);
        for (t, s) in tube.data().iter().zip(skel.data()) {
            assert!(t >= s);
        }
    }

    #[test]
    fn recall_term_extremes() {
        let y = bar();
        let tube = skeleton_tube(&y, 2);
        let full = recall(&tube, &y, 2, 1e-5).unwrap();
        assert!(full.value.abs() < 1e-9);
        let none = recall(&Tensor4::zeros(tube.shape()), &y, 2, 1e-5).unwrap();
        assert!((none.value - 1.0).abs() < 1e-5);
    }
}
