//! Differentiable soft skeletonization and the clDice loss built on it.
//!
//! Soft erosion is a 3×3 window minimum and soft dilation a 3×3 window
//! maximum, so the whole skeleton is piecewise linear in its input and the
//! recorded pooling traces give its exact derivative off the tie set.

use super::{overlap, LossResult, ProbLoss};
use crate::error::Result;
use crate::tensor::{pool_backward, window_max, window_min, OneHotMask, PoolTrace, Tensor4};

struct Step {
    /// `p_t - open(p_t)`, before the relu.
    residual: Tensor4,
    erode: PoolTrace,
    dilate: PoolTrace,
    /// Skeleton accumulated before this step was merged in.
    skel_before: Tensor4,
    /// This step's relu output.
    delta: Tensor4,
}

/// Forward record of a soft skeleton, kept for the backward pass.
pub struct SoftSkeleton {
    steps: Vec<Step>,
    output: Tensor4,
}

impl SoftSkeleton {
    pub fn forward(p: &Tensor4, iterations: usize) -> Result<Self> {
        let mut steps: Vec<Step> = Vec::with_capacity(iterations + 1);
        let mut skel = Tensor4::zeros(p.shape());
        let mut current = p.clone();
        for t in 0..=iterations {
            let (eroded, erode) = window_min(&current, 3)?;
            let (opened, dilate) = window_max(&eroded, 3)?;
            let residual = current.sub(&opened)?;
            let delta = residual.map(|v| v.max(0.0));
            let skel_before = skel.clone();
            if t == 0 {
                skel = delta.clone();
            } else {
                let d = skel.data_mut();
                for (s, &dv) in d.iter_mut().zip(delta.data()) {
                    *s += dv * (1.0 - *s);
                }
            }
            steps.push(Step {
                residual,
                erode,
                dilate,
                skel_before,
                delta,
            });
            current = eroded;
        }
        Ok(SoftSkeleton {
            steps,
            output: skel,
        })
    }

    pub fn output(&self) -> &Tensor4 {
        &self.output
    }

    pub fn into_output(self) -> Tensor4 {
        self.output
    }

    /// Gradient with respect to the input given `∂L/∂skeleton`.
    pub fn backward(&self, upstream: &Tensor4) -> Result<Tensor4> {
        let shape = self.output.shape();
        shape.expect("soft_skeleton backward", upstream.shape())?;
        let last = self.steps.len() - 1;
        let mut g_skel = upstream.clone();
        // Gradient flowing into p_{t+1} = erode(p_t), from later steps.
        let mut g_next_input: Option<Tensor4> = None;
        for t in (0..=last).rev() {
            let step = &self.steps[t];
            // skel_t = skel_{t-1} + delta_t (1 - skel_{t-1}); skel_0 = delta_0.
            let g_delta = if t == 0 {
                g_skel.clone()
            } else {
                let g_delta = g_skel.mul(&step.skel_before.map(|s| 1.0 - s))?;
                g_skel = g_skel.mul(&step.delta.map(|d| 1.0 - d))?;
                g_delta
            };
            let g_residual = step
                .residual
                .zip_map(&g_delta, "relu", |r, g| if r > 0.0 { g } else { 0.0 })?;
            // residual = p_t - dilate(erode(p_t))
            let mut g_eroded = pool_backward(&step.dilate, &g_residual.scale(-1.0))?;
            if let Some(g) = g_next_input.take() {
                g_eroded.add_assign(&g)?;
            }
            let mut g_input = pool_backward(&step.erode, &g_eroded)?;
            g_input.add_assign(&g_residual)?;
            g_next_input = Some(g_input);
        }
        Ok(g_next_input.expect("at least one step"))
    }
}

/// Iterative soft skeleton of `p` with `iterations` erosion steps after the
/// initial opening residual.
pub fn soft_skeleton(p: &Tensor4, iterations: usize) -> Result<Tensor4> {
    Ok(SoftSkeleton::forward(p, iterations)?.into_output())
}

/// Sum of `a * b` over the foreground channels.
fn masked_dot(a: &Tensor4, b: &Tensor4, channels: std::ops::Range<usize>) -> f64 {
    let s = a.shape();
    let mut acc = 0.0;
    for k in channels {
        for bb in 0..s.batch {
            acc += a.plane(bb, k).iter().zip(b.plane(bb, k)).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    acc
}

fn masked_sum(a: &Tensor4, channels: std::ops::Range<usize>) -> f64 {
    let s = a.shape();
    let mut acc = 0.0;
    for k in channels {
        for bb in 0..s.batch {
            acc += a.plane(bb, k).iter().sum::<f64>();
        }
    }
    acc
}

pub(crate) fn cldice(
    yhat: &Tensor4,
    y: &OneHotMask,
    iterations: usize,
    lambda: f64,
    smooth: f64,
) -> Result<ProbLoss> {
    let yt = y.tensor();
    let fg = y.foreground_channels();
    let skel_pred = SoftSkeleton::forward(yhat, iterations)?;
    let skel_true = soft_skeleton(yt, iterations)?;
    let sp = skel_pred.output();

    let sp_sum = masked_sum(sp, fg.clone()) + smooth;
    let st_sum = masked_sum(&skel_true, fg.clone()) + smooth;
    let prec = (masked_dot(sp, yt, fg.clone()) + smooth) / sp_sum;
    let sens = (masked_dot(&skel_true, yhat, fg.clone()) + smooth) / st_sum;
    let hm = prec + sens;
    let term = 1.0 - 2.0 * prec * sens / hm;
    let d_prec = -2.0 * sens * sens / (hm * hm);
    let d_sens = -2.0 * prec * prec / (hm * hm);

    let s = yhat.shape();
    let mut g_skel = Tensor4::zeros(s);
    let mut grad = Tensor4::zeros(s);
    for k in fg {
        for b in 0..s.batch {
            for (g, &t) in g_skel.plane_mut(b, k).iter_mut().zip(yt.plane(b, k)) {
                *g = lambda * d_prec * (t - prec) / sp_sum;
            }
            for (g, &st) in grad.plane_mut(b, k).iter_mut().zip(skel_true.plane(b, k)) {
                *g = lambda * d_sens * st / st_sum;
            }
        }
    }
    grad.add_assign(&skel_pred.backward(&g_skel)?)?;

    let dice = overlap::dice(yhat, y, smooth);
    grad.add_assign(&dice.grad.scale(1.0 - lambda))?;
    Ok(ProbLoss {
        value: lambda * term + (1.0 - lambda) * dice.value,
        grad,
    })
}

/// `lambda * clDice + (1 - lambda) * Dice` over the foreground channels.
pub fn cldice_loss(
    yhat: &Tensor4,
    y: &OneHotMask,
    iterations: usize,
    lambda: f64,
    smooth: f64,
) -> Result<LossResult> {
    yhat.shape().expect("cldice_loss", y.shape())?;
    cldice(yhat, y, iterations, lambda, smooth)?.into_result(yhat, y.activation())
}
