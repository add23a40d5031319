//! Evaluation on binarized predictions: Dice, Betti-0 error, clDice,
//! roundness, and the binary-closing post-processing baseline.
//!
//! Foreground is 8-connected (background implicitly 4-connected).
//! Multi-class images are scored per foreground class and macro-averaged.

mod components;
mod morphology;
mod report;
mod shape;
mod thinning;

use serde::{Deserialize, Serialize};

use crate::tensor::{Activation, OneHotMask, Tensor4};

pub use components::{component_labels, connected_components, Connectivity};
pub use morphology::{binary_closing, dilate, erode};
pub use report::{evaluate_batch, ImageMetrics, MetricSummary, MetricsReport};
pub use shape::{component_roundness, outer_perimeter, roundness_error, roundness_score};
pub use thinning::hard_skeleton;

/// Row-major `height`×`width` grid of booleans.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask data length");
        BinaryMask {
            height,
            width,
            data,
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    /// Pixels strictly above `threshold`.
    pub fn from_plane(height: usize, width: usize, plane: &[f64], threshold: f64) -> Self {
        Self::new(height, width, plane.iter().map(|&v| v > threshold).collect())
    }

    /// Parses rows of `#` (set) and any other character (clear).
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), width, "ragged ascii mask");
                r.bytes().map(|c| c == b'#')
            })
            .collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        assert_eq!(self.data.len(), other.data.len(), "mask sizes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    pub fn to_plane(&self) -> Vec<f64> {
        self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_ascii(&self) -> Vec<String> {
        self.data
            .chunks(self.width)
            .map(|r| r.iter().map(|&v| if v { '#' } else { '.' }).collect())
            .collect()
    }
}

/// Hard masks per batch item and channel: argmax across channels in
/// softmax mode (ties to the lowest channel), `> 0.5` in sigmoid mode.
pub fn binarize(yhat: &Tensor4, activation: Activation) -> Vec<Vec<BinaryMask>> {
    let s = yhat.shape();
    let (h, w) = (s.height, s.width);
    (0..s.batch)
        .map(|b| match activation {
            Activation::Sigmoid => (0..s.channels)
                .map(|k| BinaryMask::from_plane(h, w, yhat.plane(b, k), 0.5))
                .collect(),
            Activation::Softmax => {
                let n = s.plane();
                let item = yhat.item(b);
                let winner: Vec<usize> = (0..n)
                    .map(|i| {
                        let mut best = 0;
                        for k in 1..s.channels {
                            if item[k * n + i] > item[best * n + i] {
                                best = k;
                            }
                        }
                        best
                    })
                    .collect();
                (0..s.channels)
                    .map(|k| BinaryMask::new(h, w, winner.iter().map(|&c| c == k).collect()))
                    .collect()
            }
        })
        .collect()
}

/// Ground-truth masks per batch item and channel.
pub fn masks_of(y: &OneHotMask) -> Vec<Vec<BinaryMask>> {
    let s = y.shape();
    (0..s.batch)
        .map(|b| {
            (0..s.channels)
                .map(|k| BinaryMask::from_plane(s.height, s.width, y.tensor().plane(b, k), 0.5))
                .collect()
        })
        .collect()
}

/// `2|P∩G| / (|P| + |G|)`, and 1 when both are empty.
pub fn dice_coefficient(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let total = pred.count() + gt.count();
    if total == 0 {
        return 1.0;
    }
    2.0 * pred.intersection_count(gt) as f64 / total as f64
}

/// `|CC(pred) - CC(gt)|` under 8-connectivity.
pub fn betti0_error(pred: &BinaryMask, gt: &BinaryMask) -> usize {
    let a = connected_components(pred, Connectivity::Eight);
    let b = connected_components(gt, Connectivity::Eight);
    a.abs_diff(b)
}

/// Harmonic mean of skeleton precision `|S(P)∩G|/|S(P)|` and skeleton
/// sensitivity `|S(G)∩P|/|S(G)|`.
pub fn cldice_metric(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let sp = hard_skeleton(pred);
    let sg = hard_skeleton(gt);
    let (np, ng) = (sp.count(), sg.count());
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let prec = sp.intersection_count(gt) as f64 / np as f64;
    let sens = sg.intersection_count(pred) as f64 / ng as f64;
    if prec + sens == 0.0 {
        0.0
    } else {
        2.0 * prec * sens / (prec + sens)
    }
}
