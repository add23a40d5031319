//! Same-class neighbor penalization.
//!
//! Every logit is replaced by the worst logit of its own class within a
//! `w`×`w` window: foreground positions (mask 1) take the minimum over
//! foreground neighbors, background positions (mask 0) the maximum over
//! background neighbors. The window always contains its center, so the
//! replacement is well defined even for isolated pixels.
//!
//! Cross-class candidates are excluded outright instead of being shifted by
//! a large sentinel constant; the result is the infinite-sentinel limit and
//! stays exact for logits of any magnitude.
//!
//! The backward pass routes each output gradient to the single position
//! that was copied (lowest linear index on ties), so a logit propagated to
//! `n` positions accumulates `n` upstream contributions and a logit that
//! was never propagated receives none.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{LossFn, LossResult};
use crate::tensor::{scan_window, Extremum, OneHotMask, PoolTrace, Tensor4, WindowSize};

/// Which logits enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScnpMode {
    /// Plain logits only.
    #[default]
    Off,
    /// Penalized logits only.
    ScnpOnly { w: WindowSize },
    /// Sum of the plain and the penalized loss.
    Joint { w: WindowSize },
}

impl ScnpMode {
    pub fn window(&self) -> Option<WindowSize> {
        match *self {
            ScnpMode::Off => None,
            ScnpMode::ScnpOnly { w } | ScnpMode::Joint { w } => Some(w),
        }
    }

    /// Short label used in tables: `off`, `on`, `joint`.
    pub fn label(&self) -> &'static str {
        match self {
            ScnpMode::Off => "off",
            ScnpMode::ScnpOnly { .. } => "on",
            ScnpMode::Joint { .. } => "joint",
        }
    }
}

/// Selection record of one [`scnp_forward`] call.
#[derive(Debug, Clone)]
pub struct ScnpTrace {
    trace: PoolTrace,
    mask: OneHotMask,
    window: WindowSize,
}

impl ScnpTrace {
    /// Source position of every output, indexed linearly.
    pub fn sources(&self) -> &[usize] {
        self.trace.sources()
    }

    pub fn mask(&self) -> &OneHotMask {
        &self.mask
    }

    pub fn window(&self) -> WindowSize {
        self.window
    }

    pub fn winner_count(&self) -> usize {
        self.trace.winner_count()
    }
}

pub fn scnp_forward(
    z: &Tensor4,
    y: &OneHotMask,
    w: WindowSize,
) -> Result<(Tensor4, ScnpTrace)> {
    let shape = z.shape();
    shape.expect("scnp_forward", y.shape())?;
    let (h, wd) = (shape.height, shape.width);
    let n = shape.plane();
    let radius = w.radius();
    let mut out = Tensor4::zeros(shape);
    let mut sources = vec![0usize; shape.len()];
    for b in 0..shape.batch {
        for k in 0..shape.channels {
            let offset = shape.index(b, k, 0, 0);
            let logits = z.plane(b, k);
            let labels = y.tensor().plane(b, k);
            let dst = out.plane_mut(b, k);
            for i in 0..n {
                let fg = labels[i] == 1.0;
                let j = if radius == 0 {
                    i
                } else {
                    let extremum = if fg { Extremum::Min } else { Extremum::Max };
                    scan_window(logits, h, wd, radius, i, extremum, |j| {
                        (labels[j] == 1.0) == fg
                    })
                };
                dst[i] = logits[j];
                sources[offset + i] = offset + j;
            }
        }
    }
    let trace = ScnpTrace {
        trace: PoolTrace::new(shape, sources),
        mask: y.clone(),
        window: w,
    };
    Ok((out, trace))
}

pub fn scnp_backward(trace: &ScnpTrace, upstream: &Tensor4) -> Result<Tensor4> {
    crate::tensor::pool_backward(&trace.trace, upstream)
}

/// Evaluates `loss` on the logits selected by `mode`, returning the
/// gradient with respect to the raw logits `z`.
pub fn apply_mode(mode: ScnpMode, loss: &LossFn, z: &Tensor4, y: &OneHotMask) -> Result<LossResult> {
    let penalized = |w: WindowSize| -> Result<LossResult> {
        let (zt, trace) = scnp_forward(z, y, w)?;
        let r = loss.evaluate(&zt, y)?;
        Ok(LossResult {
            value: r.value,
            grad_z: scnp_backward(&trace, &r.grad_z)?,
        })
    };
    match mode {
        ScnpMode::Off => loss.evaluate(z, y),
        ScnpMode::ScnpOnly { w } => penalized(w),
        ScnpMode::Joint { w } => {
            let plain = loss.evaluate(z, y)?;
            let pen = penalized(w)?;
            Ok(LossResult {
                value: plain.value + pen.value,
                grad_z: plain.grad_z.add(&pen.grad_z)?,
            })
        }
    }
}
