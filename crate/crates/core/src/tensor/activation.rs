use serde::{Deserialize, Serialize};

use super::Tensor4;
use crate::error::{Error, Result};

/// Output normalization, which also fixes how ground-truth channels relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Mutually exclusive classes, normalized across channels.
    #[default]
    Softmax,
    /// Independent per-channel probabilities.
    Sigmoid,
}

/// Per-pixel softmax across channels with max subtraction.
pub fn softmax_channels(z: &Tensor4) -> Result<Tensor4> {
    let s = z.shape();
    if s.channels < 2 {
        return Err(Error::invalid(format!(
            "softmax needs at least 2 channels, got {}",
            s.channels
        )));
    }
    let n = s.plane();
    let c = s.channels;
    let mut out = Tensor4::zeros(s);
    let mut row = vec![0.0f64; c];
    for b in 0..s.batch {
        let src = z.item(b);
        let dst = out.item_mut(b);
        for i in 0..n {
            let mut m = f64::NEG_INFINITY;
            for k in 0..c {
                row[k] = src[k * n + i];
                m = m.max(row[k]);
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                total += *v;
            }
            for k in 0..c {
                dst[k * n + i] = row[k] / total;
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: for each pixel,
/// `out_c = sum_k upstream_k * yhat_k * (delta_kc - yhat_c)`.
pub fn softmax_jacobian_apply(yhat: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    let s = yhat.shape();
    s.expect("softmax_jacobian_apply", upstream.shape())?;
    let n = s.plane();
    let c = s.channels;
    let mut out = Tensor4::zeros(s);
    for b in 0..s.batch {
        let p = yhat.item(b);
        let u = upstream.item(b);
        let dst = out.item_mut(b);
        for i in 0..n {
            // sum_k u_k p_k
            let mut dot = 0.0;
            for k in 0..c {
                dot += u[k * n + i] * p[k * n + i];
            }
            for k in 0..c {
                let j = k * n + i;
                dst[j] = p[j] * (u[j] - dot);
            }
        }
    }
    Ok(out)
}

pub fn sigmoid(z: &Tensor4) -> Tensor4 {
    z.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// `upstream * yhat * (1 - yhat)`.
pub fn sigmoid_grad(yhat: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    yhat.zip_map(upstream, "sigmoid_grad", |p, u| u * p * (1.0 - p))
}

pub fn relu(t: &Tensor4) -> Tensor4 {
    t.map(|v| v.max(0.0))
}

/// Gradient of relu given its pre-activation input; zero at the kink.
pub fn relu_backward(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    input.zip_map(upstream, "relu_backward", |x, u| if x > 0.0 { u } else { 0.0 })
}

pub fn normalize(z: &Tensor4, activation: Activation) -> Result<Tensor4> {
    match activation {
        Activation::Softmax => softmax_channels(z),
        Activation::Sigmoid => Ok(sigmoid(z)),
    }
}

pub fn normalize_backward(
    yhat: &Tensor4,
    upstream: &Tensor4,
    activation: Activation,
) -> Result<Tensor4> {
    match activation {
        Activation::Softmax => softmax_jacobian_apply(yhat, upstream),
        Activation::Sigmoid => sigmoid_grad(yhat, upstream),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pixel(values: &[f64]) -> Tensor4 {
        Tensor4::from_vec(Shape::new(1, values.len(), 1, 1), values.to_vec()).unwrap()
    }

    fn random(shape: Shape, seed: u64, scale: f64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-scale..scale))
    }

    #[test]
    fn softmax_worked_values() {
        let p = softmax_channels(&pixel(&[2.3, 1.2, 1.4])).unwrap();
        for (a, b) in p.data().iter().zip([0.57, 0.19, 0.23]) {
            assert!((a - b).abs() <= 0.005, "{a} vs {b}");
        }
        let p = softmax_channels(&pixel(&[1.9, 1.7, 1.7])).unwrap();
        for (a, b) in p.data().iter().zip([0.38, 0.31, 0.31]) {
            assert!((a - b).abs() <= 0.005, "{a} vs {b}");
        }
        let p = softmax_channels(&pixel(&[0.0, 0.0, 0.0])).unwrap();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_needs_two_channels_and_is_stable() {
        assert!(softmax_channels(&pixel(&[1.0])).is_err());
        let p = softmax_channels(&pixel(&[1000.0, -1000.0, 999.0])).unwrap();
        assert!(p.all_finite());
        let t = random(Shape::new(2, 4, 3, 3), 5, 30.0);
        let p = softmax_channels(&t).unwrap();
        let s = p.shape();
        for b in 0..s.batch {
            for y in 0..s.height {
                for x in 0..s.width {
                    let total: f64 = (0..s.channels).map(|c| p.get(b, c, y, x)).sum();
                    assert!((total - 1.0).abs() < 1e-6);
                }
            }
        }
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn softmax_jacobian_hand_values() {
        let yhat = pixel(&[0.5, 0.5]);
        let g = softmax_jacobian_apply(&yhat, &pixel(&[1.0, 0.0])).unwrap();
        assert_eq!(g.data(), &[0.25, -0.25]);
        let yhat = softmax_channels(&random(Shape::new(1, 3, 2, 2), 9, 2.0)).unwrap();
        let g = softmax_jacobian_apply(&yhat, &Tensor4::full(yhat.shape(), 0.7)).unwrap();
        assert!(g.max_abs() < 1e-15);
    }

    fn check_fd(
        input: &Tensor4,
        forward: impl Fn(&Tensor4) -> Tensor4,
        backward: impl Fn(&Tensor4, &Tensor4) -> Tensor4,
    ) {
        let weights = random(input.shape(), 77, 1.0);
        let objective = |x: &Tensor4| {
            forward(x)
                .data()
                .iter()
                .zip(weights.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let analytic = backward(&forward(input), &weights);
        let eps = 1e-3;
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[i] += eps;
            let mut minus = input.clone();
            minus.data_mut()[i] -= eps;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            assert!(rel < 1e-4, "i={i} analytic={a} numeric={numeric}");
        }
    }

    #[test]
    fn softmax_backward_matches_central_differences() {
        let z = random(Shape::new(2, 3, 3, 3), 21, 2.0);
        check_fd(
            &z,
            |x| softmax_channels(x).unwrap(),
            |y, u| softmax_jacobian_apply(y, u).unwrap(),
        );
    }

    #[test]
    fn sigmoid_values_and_backward() {
        let half = sigmoid(&pixel(&[0.0]));
        assert_eq!(half.data(), &[0.5]);
        assert_eq!(sigmoid_grad(&half, &pixel(&[1.0])).unwrap().data(), &[0.25]);
        let big = sigmoid(&pixel(&[40.0, -40.0]));
        assert!(big.data()[0] > 1.0 - 1e-15 && big.data()[1] < 1e-15);
        let g = sigmoid_grad(&big, &pixel(&[1.0, 1.0])).unwrap();
        assert!(g.max_abs() < 1e-15);

        let z = random(Shape::new(1, 2, 4, 4), 22, 3.0);
        check_fd(&z, sigmoid, |y, u| sigmoid_grad(y, u).unwrap());
    }
}
