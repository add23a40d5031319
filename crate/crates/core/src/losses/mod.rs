//! Segmentation losses with exact analytic gradients.
//!
//! Every loss is defined on normalized predictions `ŷ` (softmax or sigmoid,
//! as given by the mask's [`Activation`]). Each public `*_loss` function
//! returns the value together with the gradient with respect to the raw
//! logits, obtained by pushing `∂L/∂ŷ` through the matching Jacobian.

mod distance_weighted;
mod overlap;
mod pixelwise;
mod skeleton;
mod skeleton_recall;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{normalize, normalize_backward, Activation, OneHotMask, Tensor4};

pub use distance_weighted::{region_wise_map, rw_loss};
pub use overlap::{dice_loss, tversky_loss};
pub use pixelwise::{ce_loss, focal_loss, PROB_CLAMP};
pub use skeleton::{cldice_loss, soft_skeleton, SoftSkeleton};
pub use skeleton_recall::{skeleton_recall_loss, skeleton_tube};

/// Smoothing constant of the overlap-based losses.
pub const DEFAULT_SMOOTH: f64 = 1e-5;

/// Loss value and its gradient with respect to the raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_z: Tensor4,
}

/// Value and `∂L/∂ŷ` before the normalization Jacobian is applied.
#[derive(Debug, Clone)]
pub(crate) struct ProbLoss {
    pub value: f64,
    pub grad: Tensor4,
}

impl ProbLoss {
    fn add(mut self, other: ProbLoss) -> Result<ProbLoss> {
        self.value += other.value;
        self.grad.add_assign(&other.grad)?;
        Ok(self)
    }

    pub(crate) fn into_result(self, yhat: &Tensor4, activation: Activation) -> Result<LossResult> {
        Ok(LossResult {
            value: self.value,
            grad_z: normalize_backward(yhat, &self.grad, activation)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Dice,
    CeDice,
    Tversky,
    Focal,
    ClDice,
    SkelRecall,
    RwLoss,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Ce,
        LossKind::Dice,
        LossKind::CeDice,
        LossKind::Tversky,
        LossKind::Focal,
        LossKind::ClDice,
        LossKind::SkelRecall,
        LossKind::RwLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Dice => "dice",
            LossKind::CeDice => "cedice",
            LossKind::Tversky => "tversky",
            LossKind::Focal => "focal",
            LossKind::ClDice => "cldice",
            LossKind::SkelRecall => "skelrecall",
            LossKind::RwLoss => "rwloss",
        }
    }

    /// The loss with its default hyper-parameters.
    pub fn default_loss(self) -> LossFn {
        match self {
            LossKind::Ce => LossFn::Ce,
            LossKind::Dice => LossFn::Dice {
                smooth: DEFAULT_SMOOTH,
            },
            LossKind::CeDice => LossFn::CeDice {
                smooth: DEFAULT_SMOOTH,
            },
            LossKind::Tversky => LossFn::Tversky {
                beta: 0.7,
                smooth: DEFAULT_SMOOTH,
            },
            LossKind::Focal => LossFn::Focal {
                alpha: 1.0,
                gamma: 2.0,
            },
            LossKind::ClDice => LossFn::ClDice {
                iterations: 4,
                lambda: 0.5,
                smooth: DEFAULT_SMOOTH,
            },
            LossKind::SkelRecall => LossFn::SkelRecall {
                radius: 2,
                smooth: DEFAULT_SMOOTH,
            },
            LossKind::RwLoss => LossFn::RwLoss,
        }
    }
}

/// A loss together with its hyper-parameters.
///
/// The textual form is `name[:key=value,...]`, e.g. `tversky:beta=0.7` or
/// `cldice:i=4,lambda=0.5`; omitted keys take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossFn {
    Ce,
    Dice { smooth: f64 },
    CeDice { smooth: f64 },
    /// False positives are weighted by `1 - beta`, false negatives by `beta`.
    Tversky { beta: f64, smooth: f64 },
    Focal { alpha: f64, gamma: f64 },
    /// `lambda * clDice + (1 - lambda) * Dice`, with `iterations` soft
    /// skeleton steps.
    ClDice { iterations: usize, lambda: f64, smooth: f64 },
    /// Cross entropy plus soft recall over a tube of `radius` around the
    /// ground-truth skeleton.
    SkelRecall { radius: usize, smooth: f64 },
    RwLoss,
}

impl LossFn {
    pub fn kind(&self) -> LossKind {
        match self {
            LossFn::Ce => LossKind::Ce,
            LossFn::Dice { .. } => LossKind::Dice,
            LossFn::CeDice { .. } => LossKind::CeDice,
            LossFn::Tversky { .. } => LossKind::Tversky,
            LossFn::Focal { .. } => LossKind::Focal,
            LossFn::ClDice { .. } => LossKind::ClDice,
            LossFn::SkelRecall { .. } => LossKind::SkelRecall,
            LossFn::RwLoss => LossKind::RwLoss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            LossFn::Ce | LossFn::RwLoss => Ok(()),
            LossFn::Dice { smooth } | LossFn::CeDice { smooth } => positive("eps", smooth),
            LossFn::Tversky { beta, smooth } => {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::invalid(format!("tversky beta must be in (0, 1), got {beta}")));
                }
                positive("eps", smooth)
            }
            LossFn::Focal { alpha, gamma } => {
                positive("alpha", alpha)?;
                if gamma >= 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("focal gamma must be >= 0, got {gamma}")))
                }
            }
            LossFn::ClDice {
                iterations,
                lambda,
                smooth,
            } => {
                if iterations == 0 {
                    return Err(Error::invalid("cldice needs at least one iteration"));
                }
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(Error::invalid(format!("cldice lambda must be in [0, 1], got {lambda}")));
                }
                positive("eps", smooth)
            }
            LossFn::SkelRecall { smooth, .. } => positive("eps", smooth),
        }
    }

    /// Loss of `softmax(z)` or `sigmoid(z)` against `y`, with the gradient
    /// with respect to `z`.
    pub fn evaluate(&self, z: &Tensor4, y: &OneHotMask) -> Result<LossResult> {
        let activation = y.activation();
        let yhat = normalize(z, activation)?;
        self.prob_loss(&yhat, y)?.into_result(&yhat, activation)
    }

    pub(crate) fn prob_loss(&self, yhat: &Tensor4, y: &OneHotMask) -> Result<ProbLoss> {
        yhat.shape().expect("loss", y.shape())?;
        match *self {
            LossFn::Ce => Ok(pixelwise::cross_entropy(yhat, y)),
            LossFn::Dice { smooth } => Ok(overlap::dice(yhat, y, smooth)),
            LossFn::CeDice { smooth } => {
                pixelwise::cross_entropy(yhat, y).add(overlap::dice(yhat, y, smooth))
            }
            LossFn::Tversky { beta, smooth } => Ok(overlap::tversky(yhat, y, beta, smooth)),
            LossFn::Focal { alpha, gamma } => Ok(pixelwise::focal(yhat, y, alpha, gamma)),
            LossFn::ClDice {
                iterations,
                lambda,
                smooth,
            } => skeleton::cldice(yhat, y, iterations, lambda, smooth),
            LossFn::SkelRecall { radius, smooth } => {
                let recall = skeleton_recall::recall(yhat, y, radius, smooth)?;
                pixelwise::cross_entropy(yhat, y).add(recall)
            }
            LossFn::RwLoss => distance_weighted::region_wise(yhat, y),
        }
    }
}

impl fmt::Display for LossFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.kind().name();
        match *self {
            LossFn::Ce | LossFn::RwLoss => write!(f, "{name}"),
            LossFn::Dice { smooth } | LossFn::CeDice { smooth } => write!(f, "{name}:eps={smooth:e}"),
            LossFn::Tversky { beta, smooth } => write!(f, "{name}:beta={beta},eps={smooth:e}"),
            LossFn::Focal { alpha, gamma } => write!(f, "{name}:alpha={alpha},gamma={gamma}"),
            LossFn::ClDice {
                iterations,
                lambda,
                smooth,
            } => write!(f, "{name}:i={iterations},lambda={lambda},eps={smooth:e}"),
            LossFn::SkelRecall { radius, smooth } => write!(f, "{name}:r={radius},eps={smooth:e}"),
        }
    }
}

impl FromStr for LossFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), p.trim()),
            None => (s.trim(), ""),
        };
        let kind = LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let valid: Vec<_> = LossKind::ALL.iter().map(|k| k.name()).collect();
                Error::invalid(format!(
                    "unknown loss '{name}'; valid kinds: {}",
                    valid.join(", ")
                ))
            })?;
        let mut loss = kind.default_loss();
        for pair in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, raw) = pair
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got '{pair}'")))?;
            let key = key.trim();
            let value: f64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("value of '{key}' is not a number: '{raw}'")))?;
            let as_count = || -> Result<usize> {
                if value >= 0.0 && value.fract() == 0.0 {
                    Ok(value as usize)
                } else {
                    Err(Error::invalid(format!("'{key}' must be a non-negative integer")))
                }
            };
            let unknown = || Error::invalid(format!("loss '{}' has no parameter '{key}'", kind.name()));
            match (&mut loss, key) {
                (
                    LossFn::Dice { smooth }
                    | LossFn::CeDice { smooth }
                    | LossFn::Tversky { smooth, .. }
                    | LossFn::ClDice { smooth, .. }
                    | LossFn::SkelRecall { smooth, .. },
                    "eps",
                ) => *smooth = value,
                (LossFn::Tversky { beta, .. }, "beta") => *beta = value,
                (LossFn::Focal { alpha, .. }, "alpha") => *alpha = value,
                (LossFn::Focal { gamma, .. }, "gamma") => *gamma = value,
                (LossFn::ClDice { iterations, .. }, "i") => *iterations = as_count()?,
                (LossFn::ClDice { lambda, .. }, "lambda") => *lambda = value,
                (LossFn::SkelRecall { radius, .. }, "r") => *radius = as_count()?,
                _ => return Err(unknown()),
            }
        }
        loss.validate()?;
        Ok(loss)
    }
}

impl TryFrom<String> for LossFn {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossFn> for String {
    fn from(l: LossFn) -> String {
        l.to_string()
    }
}

/// Per-class sums over batch and pixels, accumulated in class-then-pixel
/// order.
pub(crate) fn class_sum(t: &Tensor4, k: usize, mut f: impl FnMut(usize, f64) -> f64) -> f64 {
    let s = t.shape();
    let mut acc = 0.0;
    for b in 0..s.batch {
        let offset = s.index(b, k, 0, 0);
        for (i, &v) in t.plane(b, k).iter().enumerate() {
            acc += f(offset + i, v);
        }
    }
    acc
}
