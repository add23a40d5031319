use super::{Activation, Shape, Tensor4};
use crate::error::{Error, Result};

/// Binary ground truth in the same layout as the logits.
///
/// In softmax mode exactly one channel is set per pixel; in sigmoid mode
/// channels are independent.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMask {
    tensor: Tensor4,
    activation: Activation,
}

impl OneHotMask {
    pub fn new(tensor: Tensor4, activation: Activation) -> Result<Self> {
        if let Some(pos) = tensor.data().iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid(format!(
                "mask value {} at linear index {pos} is not binary",
                tensor.data()[pos]
            )));
        }
        if activation == Activation::Softmax {
            let s = tensor.shape();
            let n = s.plane();
            for b in 0..s.batch {
                let item = tensor.item(b);
                for i in 0..n {
                    let total: f64 = (0..s.channels).map(|k| item[k * n + i]).sum();
                    if total != 1.0 {
                        return Err(Error::invalid(format!(
                            "softmax mask pixel (b={b}, i={i}) has {total} active channels"
                        )));
                    }
                }
            }
        }
        Ok(OneHotMask { tensor, activation })
    }

    /// One-hot encodes per-pixel class labels laid out as (B, H, W).
    pub fn from_labels(shape: Shape, labels: &[usize]) -> Result<Self> {
        if labels.len() != shape.batch * shape.plane() {
            return Err(Error::invalid(format!(
                "{} labels for shape {shape}",
                labels.len()
            )));
        }
        let n = shape.plane();
        let mut t = Tensor4::zeros(shape);
        for b in 0..shape.batch {
            let item = t.item_mut(b);
            for i in 0..n {
                let k = labels[b * n + i];
                if k >= shape.channels {
                    return Err(Error::invalid(format!(
                        "label {k} out of range for {} channels",
                        shape.channels
                    )));
                }
                item[k * n + i] = 1.0;
            }
        }
        Ok(OneHotMask {
            tensor: t,
            activation: Activation::Softmax,
        })
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.tensor
    }

    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Whether linear position `i` is foreground for its channel.
    #[inline]
    pub fn is_set(&self, i: usize) -> bool {
        self.tensor.data()[i] == 1.0
    }

    /// Channels that carry structure: all but the background channel 0 in
    /// softmax mode, every channel in sigmoid mode.
    pub fn foreground_channels(&self) -> std::ops::Range<usize> {
        match self.activation {
            Activation::Softmax => 1..self.shape().channels,
            Activation::Sigmoid => 0..self.shape().channels,
        }
    }

    pub fn gather_batch(&self, indices: &[usize]) -> Result<OneHotMask> {
        Ok(OneHotMask {
            tensor: self.tensor.gather_batch(indices)?,
            activation: self.activation,
        })
    }
}
