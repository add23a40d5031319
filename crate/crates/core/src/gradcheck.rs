//! End-to-end finite-difference check of `∂L/∂z` through normalization,
//! the loss, and optionally SCNP.
//!
//! Instances are built away from every kink the composition has: logits in
//! each channel plane are a shuffled lattice whose spacing exceeds twice the
//! step, so no min/max selection flips. The skeleton loss also pools the
//! normalized predictions; one ±ε step moves any probability by at most
//! ε/4, so instances are resampled until values within each plane are
//! more than ε/2 apart, unless they are copies of the same logits (SCNP
//! duplicates values, and copies move together).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{LossFn, LossKind};
use crate::rng;
use crate::scnp::{apply_mode, scnp_forward, ScnpMode};
use crate::tensor::{normalize, Activation, OneHotMask, Shape, Tensor4};

pub const EPS: f64 = 1e-3;
/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-8;
/// Logit range of the lattice, `[-SPAN/2, SPAN/2]`, for channel 0.
const SPAN: f64 = 3.0;
/// Channel `k` stretches its lattice by `1 + k * STRETCH` so that logit
/// differences across channels do not coincide.
const STRETCH: f64 = 0.137;
const MAX_ATTEMPTS: u64 = 10_000;

/// Pass threshold: looser for losses with piecewise-linear parts.
pub fn tolerance(loss: &LossFn) -> f64 {
    match loss.kind() {
        LossKind::ClDice => 1e-3,
        _ => 1e-4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(b, c, y, x)` of the worst coordinate.
    pub coordinate: [usize; 4],
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Smaller planes for the skeleton loss keep gap rejection cheap.
pub fn instance_shape(loss: &LossFn, activation: Activation) -> Shape {
    match (loss.kind(), activation) {
        (LossKind::ClDice, _) => Shape::new(2, 2, 5, 5),
        (_, Activation::Softmax) => Shape::new(2, 3, 6, 6),
        (_, Activation::Sigmoid) => Shape::new(2, 2, 6, 6),
    }
}

fn lattice_logits(shape: Shape, rng: &mut impl Rng) -> Tensor4 {
    let n = shape.plane();
    let mut z = Tensor4::zeros(shape);
    for b in 0..shape.batch {
        for k in 0..shape.channels {
            let mut ranks: Vec<usize> = (0..n).collect();
            ranks.shuffle(rng);
            let span = SPAN * (1.0 + STRETCH * k as f64);
            for (v, r) in z.plane_mut(b, k).iter_mut().zip(ranks) {
                *v = span * (r as f64 / (n - 1) as f64 - 0.5);
            }
        }
    }
    z
}

fn random_mask(shape: Shape, activation: Activation, rng: &mut impl Rng) -> Result<OneHotMask> {
    match activation {
        Activation::Softmax => {
            let labels: Vec<usize> = (0..shape.batch * shape.plane())
                .map(|_| rng.random_range(0..shape.channels))
                .collect();
            OneHotMask::from_labels(shape, &labels)
        }
        Activation::Sigmoid => {
            let t = Tensor4::from_fn(shape, |_, _, _, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
            OneHotMask::new(t, activation)
        }
    }
}

/// Whether values inside each plane of `p` are at least `gap` apart,
/// except exact copies. A copy draws on the same logit sources
/// (`sources[b][i][k]`): in every channel under softmax, in its own channel
/// under sigmoid.
fn well_separated(p: &Tensor4, sources: &[Vec<Vec<usize>>], activation: Activation, gap: f64) -> bool {
    let s = p.shape();
    for b in 0..s.batch {
        for k in 0..s.channels {
            let plane = p.plane(b, k);
            let mut order: Vec<usize> = (0..plane.len()).collect();
            order.sort_by(|&i, &j| plane[i].total_cmp(&plane[j]));
            for (a, &i) in order.iter().enumerate() {
                for &j in &order[a + 1..] {
                    if plane[j] - plane[i] >= gap {
                        break;
                    }
                    let same = match activation {
                        Activation::Softmax => sources[b][i] == sources[b][j],
                        Activation::Sigmoid => sources[b][i][k] == sources[b][j][k],
                    };
                    if plane[j] != plane[i] || !same {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Per pixel, the source position of its logit in each channel.
fn source_signatures(shape: Shape, linear_sources: Option<&[usize]>) -> Vec<Vec<Vec<usize>>> {
    (0..shape.batch)
        .map(|b| {
            (0..shape.plane())
                .map(|i| {
                    (0..shape.channels)
                        .map(|k| {
                            let at = (b * shape.channels + k) * shape.plane() + i;
                            linear_sources.map_or(at, |src| src[at]) % shape.plane()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// A tie-free `(z, y)` pair for `loss` under `mode`.
pub fn tie_free_instance(
    loss: &LossFn,
    mode: ScnpMode,
    activation: Activation,
    seed: u64,
) -> Result<(Tensor4, OneHotMask)> {
    let shape = instance_shape(loss, activation);
    let needs_gap = loss.kind() == LossKind::ClDice;
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng::indexed_stream(seed, "gradcheck", attempt);
        let z = lattice_logits(shape, &mut r);
        let y = random_mask(shape, activation, &mut r)?;
        if !needs_gap {
            return Ok((z, y));
        }
        let own = source_signatures(shape, None);
        let mut ok = well_separated(&normalize(&z, activation)?, &own, activation, EPS / 2.0);
        if let Some(w) = mode.window() {
            let (zt, trace) = scnp_forward(&z, &y, w)?;
            let copied = source_signatures(shape, Some(trace.sources()));
            ok &= well_separated(&normalize(&zt, activation)?, &copied, activation, EPS / 2.0);
        }
        if ok {
            return Ok((z, y));
        }
    }
    Err(crate::error::Error::invalid(format!(
        "no tie-free instance found for {loss} after {MAX_ATTEMPTS} attempts"
    )))
}

/// Compares `apply_mode(mode, loss, z, y)`'s gradient against central
/// differences at every coordinate of `z`.
pub fn check_at(loss: &LossFn, mode: ScnpMode, z: &Tensor4, y: &OneHotMask) -> Result<GradcheckReport> {
    let analytic = apply_mode(mode, loss, z, y)?.grad_z;
    let s = z.shape();
    let mut probe = z.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        coordinate: [0; 4],
        analytic: 0.0,
        numeric: 0.0,
        coordinates: z.len(),
        tolerance: tolerance(loss),
    };
    for i in 0..z.len() {
        let orig = z.data()[i];
        probe.data_mut()[i] = orig + EPS;
        let up = apply_mode(mode, loss, &probe, y)?.value;
        probe.data_mut()[i] = orig - EPS;
        let down = apply_mode(mode, loss, &probe, y)?.value;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error || i == 0 {
            let plane = s.plane();
            let (b, c) = (i / (s.channels * plane), (i / plane) % s.channels);
            let (yy, xx) = ((i % plane) / s.width, i % s.width);
            report.max_rel_error = rel;
            report.coordinate = [b, c, yy, xx];
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

pub fn gradcheck(loss: &LossFn, mode: ScnpMode, activation: Activation, seed: u64) -> Result<GradcheckReport> {
    let (z, y) = tie_free_instance(loss, mode, activation, seed)?;
    check_at(loss, mode, &z, &y)
}
