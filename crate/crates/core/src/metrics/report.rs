use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    betti0_error, binarize, binary_closing, cldice_metric, dice_coefficient, masks_of, roundness_error,
};
use crate::error::{Error, Result};
use crate::tensor::{OneHotMask, Tensor4};

/// Closing runs at most this many rounds when used as post-processing.
pub const CLOSING_MAX_ITERATIONS: usize = 64;

/// Scores for one image, macro-averaged over foreground classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub dice: f64,
    pub betti0_error: f64,
    pub cldice: f64,
    pub roundness_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub per_image: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
            per_image: values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: MetricSummary,
    pub betti0_error: MetricSummary,
    pub cldice: MetricSummary,
    pub roundness_error: MetricSummary,
}

impl MetricsReport {
    pub fn from_images(images: &[ImageMetrics]) -> Self {
        let col = |f: fn(&ImageMetrics) -> f64| MetricSummary::from_values(images.iter().map(f).collect());
        MetricsReport {
            dice: col(|m| m.dice),
            betti0_error: col(|m| m.betti0_error),
            cldice: col(|m| m.cldice),
            roundness_error: col(|m| m.roundness_error),
        }
    }

    pub fn len(&self) -> usize {
        self.dice.per_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> ImageMetrics {
        ImageMetrics {
            dice: self.dice.per_image[i],
            betti0_error: self.betti0_error.per_image[i],
            cldice: self.cldice.per_image[i],
            roundness_error: self.roundness_error.per_image[i],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per image followed by `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,dice,betti0_error,cldice,roundness_error\n");
        for i in 0..self.len() {
            let m = self.image(i);
            let _ = writeln!(out, "{i},{},{},{},{}", m.dice, m.betti0_error, m.cldice, m.roundness_error);
        }
        for (name, pick) in [("mean", 0), ("std", 1)] {
            let v = |s: &MetricSummary| if pick == 0 { s.mean } else { s.std };
            let _ = writeln!(
                out,
                "{name},{},{},{},{}",
                v(&self.dice),
                v(&self.betti0_error),
                v(&self.cldice),
                v(&self.roundness_error)
            );
        }
        out
    }
}

/// Binarizes `yhat`, optionally closes each predicted foreground mask with a
/// `closing`×`closing` square until it stops changing, and scores every
/// image against `y`.
pub fn evaluate_batch(yhat: &Tensor4, y: &OneHotMask, closing: Option<usize>) -> Result<Vec<ImageMetrics>> {
    yhat.shape().expect("evaluate_batch", y.shape())?;
    if let Some(k) = closing {
        if k == 0 || k % 2 == 0 {
            return Err(Error::invalid(format!("closing size must be odd and positive, got {k}")));
        }
    }
    let preds = binarize(yhat, y.activation());
    let gts = masks_of(y);
    let classes = y.foreground_channels();
    let n = classes.len() as f64;
    Ok(preds
        .iter()
        .zip(&gts)
        .map(|(pred, gt)| {
            let mut acc = ImageMetrics {
                dice: 0.0,
                betti0_error: 0.0,
                cldice: 0.0,
                roundness_error: 0.0,
            };
            for k in classes.clone() {
                let p = match closing {
                    Some(size) => binary_closing(&pred[k], size, CLOSING_MAX_ITERATIONS),
                    None => pred[k].clone(),
                };
                acc.dice += dice_coefficient(&p, &gt[k]);
                acc.betti0_error += betti0_error(&p, &gt[k]) as f64;
                acc.cldice += cldice_metric(&p, &gt[k]);
                acc.roundness_error += roundness_error(&p, &gt[k]);
            }
            ImageMetrics {
                dice: acc.dice / n,
                betti0_error: acc.betti0_error / n,
                cldice: acc.cldice / n,
                roundness_error: acc.roundness_error / n,
            }
        })
        .collect())
}
