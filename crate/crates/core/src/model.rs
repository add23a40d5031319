//! Three-layer convolutional network: 3×3 conv, ReLU, 3×3 conv, ReLU,
//! 1×1 conv. Output logits have the input's spatial size.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_backward, relu, relu_backward, Shape, Tensor4};
use crate::tns;

pub const HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// (out channels, in channels, k, k)
    pub kernel: Tensor4,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Self {
        ConvLayer {
            kernel: Tensor4::zeros(Shape::new(out_channels, in_channels, k, k)),
            bias: vec![0.0; out_channels],
        }
    }

    /// He-uniform kernel over the fan-in, zero bias.
    fn he_uniform(out_channels: usize, in_channels: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_channels * k * k) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let mut layer = Self::zeros(out_channels, in_channels, k);
        for v in layer.kernel.data_mut() {
            *v = rng.random_range(-limit..limit);
        }
        layer
    }

    fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        conv2d(input, &self.kernel, &self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    layers: [ConvLayer; 3],
}

/// Activations kept from [`TinyCnn::forward_cached`] for the backward pass.
pub struct ForwardCache {
    input: Tensor4,
    pre1: Tensor4,
    act1: Tensor4,
    pre2: Tensor4,
    act2: Tensor4,
}

/// Parameter gradients, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: [ConvLayer; 3],
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.kernel.data(), l.bias.as_slice()])
            .collect()
    }
}

pub const LAYER_NAMES: [&str; 3] = ["conv1", "conv2", "conv3"];

impl TinyCnn {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        TinyCnn {
            layers: [
                ConvLayer::he_uniform(HIDDEN, in_channels, 3, rng),
                ConvLayer::he_uniform(HIDDEN, HIDDEN, 3, rng),
                ConvLayer::he_uniform(out_channels, HIDDEN, 1, rng),
            ],
        }
    }

    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        TinyCnn {
            layers: [
                ConvLayer::zeros(HIDDEN, in_channels, 3),
                ConvLayer::zeros(HIDDEN, HIDDEN, 3),
                ConvLayer::zeros(out_channels, HIDDEN, 1),
            ],
        }
    }

    /// Builds a model from explicit layers, checking that they chain.
    pub fn from_layers(layers: [ConvLayer; 3]) -> Result<Self> {
        let expect = [(HIDDEN, 3), (HIDDEN, 3), (layers[2].kernel.shape().batch, 1)];
        for (i, (layer, (out, k))) in layers.iter().zip(expect).enumerate() {
            let s = layer.kernel.shape();
            let in_ok = i == 0 || s.channels == HIDDEN;
            if s.batch != out || s.height != k || s.width != k || !in_ok || layer.bias.len() != out {
                return Err(Error::invalid(format!(
                    "{}: unexpected kernel {s} with {} biases",
                    LAYER_NAMES[i],
                    layer.bias.len()
                )));
            }
        }
        Ok(TinyCnn { layers })
    }

    pub fn layers(&self) -> &[ConvLayer; 3] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].kernel.shape().channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers[2].kernel.shape().batch
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.kernel.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, images: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward_cached(images)?.0)
    }

    pub fn forward_cached(&self, images: &Tensor4) -> Result<(Tensor4, ForwardCache)> {
        let pre1 = self.layers[0].forward(images)?;
        let act1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&act1)?;
        let act2 = relu(&pre2);
        let logits = self.layers[2].forward(&act2)?;
        Ok((
            logits,
            ForwardCache {
                input: images.clone(),
                pre1,
                act1,
                pre2,
                act2,
            },
        ))
    }

    /// Parameter gradients given `∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor4) -> Result<ModelGrads> {
        let g3 = conv2d_backward(&cache.act2, &self.layers[2].kernel, upstream)?;
        let d2 = relu_backward(&cache.pre2, &g3.input)?;
        let g2 = conv2d_backward(&cache.act1, &self.layers[1].kernel, &d2)?;
        let d1 = relu_backward(&cache.pre1, &g2.input)?;
        let g1 = conv2d_backward(&cache.input, &self.layers[0].kernel, &d1)?;
        let layer = |g: crate::tensor::ConvGrads| ConvLayer {
            kernel: g.kernel,
            bias: g.bias,
        };
        Ok(ModelGrads {
            layers: [layer(g1), layer(g2), layer(g3)],
        })
    }

    /// Writes `<name>.kernel.tns` and `<name>.bias.tns` per layer into `dir`.
    pub fn save_weights(&self, dir: &Path) -> Result<()> {
        for (layer, name) in self.layers.iter().zip(LAYER_NAMES) {
            tns::write_tensor(&dir.join(format!("{name}.kernel.tns")), &layer.kernel)?;
            tns::write(&dir.join(format!("{name}.bias.tns")), &[layer.bias.len()], &layer.bias)?;
        }
        Ok(())
    }

    pub fn load_weights(dir: &Path) -> Result<Self> {
        let load = |name: &str| -> Result<ConvLayer> {
            let kernel = tns::read_tensor(&dir.join(format!("{name}.kernel.tns")))?;
            let bias_path = dir.join(format!("{name}.bias.tns"));
            let (dims, bias) = tns::read(&bias_path)?;
            if dims.len() != 1 {
                return Err(Error::format(&bias_path, format!("bias must have rank 1, got {}", dims.len())));
            }
            Ok(ConvLayer { kernel, bias })
        };
        Self::from_layers([load(LAYER_NAMES[0])?, load(LAYER_NAMES[1])?, load(LAYER_NAMES[2])?])
    }

    /// Layer names and shapes for the checkpoint manifest.
    pub fn describe(&self) -> Vec<LayerInfo> {
        self.layers
            .iter()
            .zip(LAYER_NAMES)
            .map(|(l, name)| LayerInfo {
                name: name.to_string(),
                kernel: l.kernel.shape().dims().to_vec(),
                bias: l.bias.len(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kernel: Vec<usize>,
    pub bias: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_input(shape: Shape, seed: u64) -> Tensor4 {
        let mut r = rng::stream(seed, "input");
        Tensor4::from_fn(shape, |_, _, _, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_broadcast_bias() {
        let mut m = TinyCnn::zeros(1, 2);
        m.layers[2].bias = vec![0.3, -0.7];
        let out = m.forward(&random_input(Shape::new(2, 1, 5, 6), 1)).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 2, 5, 6));
        for b in 0..2 {
            assert!(out.plane(b, 0).iter().all(|&v| v == 0.3));
            assert!(out.plane(b, 1).iter().all(|&v| v == -0.7));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = TinyCnn::new(1, 2, &mut rng::stream(5, "weights"));
        let x = random_input(Shape::new(1, 1, 8, 8), 2);
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
        assert_eq!(m, TinyCnn::new(1, 2, &mut rng::stream(5, "weights")));
        assert_eq!(m.parameter_count(), 16 * 9 + 16 + 16 * 16 * 9 + 16 + 2 * 16 + 2);
    }

    /// Offsets each hidden channel's bias so that every pre-activation in
    /// the channel clears the ReLU kink by at least `margin`; alternate
    /// channels end up fully active or fully inactive.
    fn clear_kinks(m: &mut TinyCnn, x: &Tensor4, margin: f64) {
        for layer in 0..2 {
            let (_, cache) = m.forward_cached(x).unwrap();
            let pre = if layer == 0 { &cache.pre1 } else { &cache.pre2 };
            for c in 0..HIDDEN {
                let reach = pre.plane(0, c).iter().map(|v| (v - m.layers[layer].bias[c]).abs()).fold(0.0, f64::max);
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                m.layers[layer].bias[c] = sign * (reach + margin);
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut m = TinyCnn::new(1, 2, &mut rng::stream(9, "weights"));
        let x = random_input(Shape::new(1, 1, 8, 8), 3);
        clear_kinks(&mut m, &x, 0.1);
        let (logits, cache) = m.forward_cached(&x).unwrap();
        let weights = random_input(logits.shape(), 4);
        let objective = |m: &TinyCnn| m.forward(&x).unwrap().mul(&weights).unwrap().sum();
        let grads = m.backward(&cache, &weights).unwrap();
        let analytic: Vec<f64> = grads.slices().concat();
        let eps = 1e-3;
        let mut worst: f64 = 0.0;
        let n = analytic.len();
        let mut idx = 0;
        for slot in 0..6 {
            let len = m.param_slices_mut()[slot].len();
            for j in 0..len {
                let orig = m.param_slices_mut()[slot][j];
                m.param_slices_mut()[slot][j] = orig + eps;
                let up = objective(&m);
                m.param_slices_mut()[slot][j] = orig - eps;
                let down = objective(&m);
                m.param_slices_mut()[slot][j] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
                worst = worst.max(rel);
                idx += 1;
            }
        }
        assert_eq!(idx, n);
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
