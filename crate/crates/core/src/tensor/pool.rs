//! Stride-1 windowed min/max with argument tracking.
//!
//! Windows are clipped at the image border: a border output only looks at
//! pixels that exist, which is the same as padding with +inf for min and
//! -inf for max. Ties go to the lowest linear index.

use serde::{Deserialize, Serialize};

use super::{Shape, Tensor4};
use crate::error::{Error, Result};

/// Odd side length of a square pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct WindowSize(usize);

impl WindowSize {
    pub const IDENTITY: WindowSize = WindowSize(1);
    pub const DEFAULT: WindowSize = WindowSize(3);

    pub fn new(w: usize) -> Result<Self> {
        if w == 0 || w.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "window size must be odd and positive, got {w}"
            )));
        }
        Ok(WindowSize(w))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn radius(self) -> usize {
        self.0 / 2
    }
}

impl Default for WindowSize {
    fn default() -> Self {
        WindowSize::DEFAULT
    }
}

impl TryFrom<usize> for WindowSize {
    type Error = Error;

    fn try_from(w: usize) -> Result<Self> {
        WindowSize::new(w)
    }
}

impl From<WindowSize> for usize {
    fn from(w: WindowSize) -> usize {
        w.0
    }
}

impl std::fmt::Display for WindowSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    #[inline]
    fn beats(self, candidate: f64, best: f64) -> bool {
        match self {
            Extremum::Min => candidate < best,
            Extremum::Max => candidate > best,
        }
    }
}

/// For every output position, the linear index (into the pooled tensor) of
/// the element that was selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolTrace {
    shape: Shape,
    sources: Vec<usize>,
}

impl PoolTrace {
    pub(crate) fn new(shape: Shape, sources: Vec<usize>) -> Self {
        debug_assert_eq!(shape.len(), sources.len());
        PoolTrace { shape, sources }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Number of distinct selected positions.
    pub fn winner_count(&self) -> usize {
        let mut hit = vec![false; self.shape.len()];
        let mut n = 0;
        for &s in &self.sources {
            if !hit[s] {
                hit[s] = true;
                n += 1;
            }
        }
        n
    }
}

/// Scans the clipped window around `center` within one `height`×`width`
/// plane and returns the in-plane index of the extremal eligible value.
///
/// `eligible(center)` must hold; the center is always a candidate, so the
/// result is defined even when it is the only eligible pixel.
#[inline]
pub(crate) fn scan_window(
    plane: &[f64],
    height: usize,
    width: usize,
    radius: usize,
    center: usize,
    extremum: Extremum,
    eligible: impl Fn(usize) -> bool,
) -> usize {
    let cy = center / width;
    let cx = center % width;
    let y0 = cy.saturating_sub(radius);
    let y1 = (cy + radius).min(height - 1);
    let x0 = cx.saturating_sub(radius);
    let x1 = (cx + radius).min(width - 1);
    let mut best = usize::MAX;
    let mut best_value = 0.0;
    for y in y0..=y1 {
        let row = y * width;
        for x in x0..=x1 {
            let j = row + x;
            if !eligible(j) {
                continue;
            }
            let v = plane[j];
            if best == usize::MAX || extremum.beats(v, best_value) {
                best = j;
                best_value = v;
            }
        }
    }
    debug_assert!(best != usize::MAX, "center must be eligible");
    best
}

fn pool(t: &Tensor4, w: WindowSize, extremum: Extremum) -> (Tensor4, PoolTrace) {
    let shape = t.shape();
    let (h, wd) = (shape.height, shape.width);
    let plane_len = shape.plane();
    let mut out = Tensor4::zeros(shape);
    let mut sources = vec![0usize; shape.len()];
    let radius = w.radius();
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let offset = shape.index(b, c, 0, 0);
            let plane = t.plane(b, c);
            let dst = out.plane_mut(b, c);
            for i in 0..plane_len {
                let j = if radius == 0 {
                    i
                } else {
                    scan_window(plane, h, wd, radius, i, extremum, |_| true)
                };
                dst[i] = plane[j];
                sources[offset + i] = offset + j;
            }
        }
    }
    (out, PoolTrace::new(shape, sources))
}

/// Minimum over the clipped `w`×`w` window around every position.
pub fn window_min(t: &Tensor4, w: usize) -> Result<(Tensor4, PoolTrace)> {
    Ok(pool(t, WindowSize::new(w)?, Extremum::Min))
}

/// Maximum over the clipped `w`×`w` window around every position.
pub fn window_max(t: &Tensor4, w: usize) -> Result<(Tensor4, PoolTrace)> {
    Ok(pool(t, WindowSize::new(w)?, Extremum::Max))
}

/// Routes `upstream` back to the selected sources, accumulating once per
/// selection.
pub fn pool_backward(trace: &PoolTrace, upstream: &Tensor4) -> Result<Tensor4> {
    trace.shape.expect("pool_backward", upstream.shape())?;
    let mut grad = Tensor4::zeros(trace.shape);
    let g = grad.data_mut();
    for (&src, &u) in trace.sources.iter().zip(upstream.data()) {
        g[src] += u;
    }
    Ok(grad)
}
