//! Region-wise loss: predictions weighted by a per-class distance map.
//!
//! This is a minimal rate map: `-1` inside class `k`, and outside it the
//! Euclidean distance to the nearest class-`k` pixel divided by the largest
//! such distance in the image, so the weights lie in `(0, 1]`. A channel
//! without any foreground is weighted `+1` everywhere.

use super::{LossResult, ProbLoss};
use crate::distance::distance_to;
use crate::error::Result;
use crate::tensor::{OneHotMask, Tensor4};

pub fn region_wise_map(y: &OneHotMask) -> Tensor4 {
    let s = y.shape();
    let mut map = Tensor4::zeros(s);
    for b in 0..s.batch {
        for k in 0..s.channels {
            let labels = y.tensor().plane(b, k);
            let seeds: Vec<bool> = labels.iter().map(|&v| v == 1.0).collect();
            let dst = map.plane_mut(b, k);
            if !seeds.iter().any(|&s| s) {
                dst.fill(1.0);
                continue;
            }
            let d = distance_to(&seeds, s.height, s.width);
            let max = d.iter().copied().fold(0.0, f64::max);
            for ((m, &dv), &fg) in dst.iter_mut().zip(&d).zip(&seeds) {
                *m = if fg { -1.0 } else { dv / max };
            }
        }
    }
    map
}

pub(crate) fn region_wise(yhat: &Tensor4, y: &OneHotMask) -> Result<ProbLoss> {
    let map = region_wise_map(y);
    let n = yhat.len() as f64;
    let value = yhat.data().iter().zip(map.data()).map(|(p, m)| p * m).sum::<f64>() / n;
    Ok(ProbLoss {
        value,
        grad: map.scale(1.0 / n),
    })
}

/// Mean of `ŷ ⊙ M` with `M` from [`region_wise_map`].
pub fn rw_loss(yhat: &Tensor4, y: &OneHotMask) -> Result<LossResult> {
    yhat.shape().expect("rw_loss", y.shape())?;
    region_wise(yhat, y)?.into_result(yhat, y.activation())
}
