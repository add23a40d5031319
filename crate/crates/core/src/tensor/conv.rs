//! Stride-1, zero-padded "same" cross-correlation via im2col and GEMM.

use super::{Shape, Tensor4};
use crate::error::{Error, Result};

/// Gradients of [`conv2d`] with respect to each of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub kernel: Tensor4,
    pub bias: Vec<f64>,
}

fn check(input: Shape, kernel: Shape, bias_len: usize) -> Result<usize> {
    if kernel.height != kernel.width || kernel.height.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel must be square with odd size, got {kernel}"
        )));
    }
    if kernel.channels != input.channels {
        return Err(Error::invalid(format!(
            "kernel {kernel} expects {} input channels, input is {input}",
            kernel.channels
        )));
    }
    if bias_len != kernel.batch {
        return Err(Error::invalid(format!(
            "bias has {bias_len} entries for {} output channels",
            kernel.batch
        )));
    }
    Ok(kernel.height)
}

/// Unfolds one batch item into a (C·k·k) × (H·W) matrix.
fn im2col(item: &[f64], channels: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let plane = &item[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Inverse scatter of [`im2col`], accumulating into `item`.
fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, k: usize, item: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut item[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` where `a` is m×k and
/// `b` is k×n after optional transposition.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths were asserted.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-size cross-correlation. `kernel` is laid out as
/// (out channels, in channels, k, k) and `bias` has one entry per output
/// channel.
pub fn conv2d(input: &Tensor4, kernel: &Tensor4, bias: &[f64]) -> Result<Tensor4> {
    let s = input.shape();
    let ks = kernel.shape();
    let k = check(s, ks, bias.len())?;
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    let rows = s.channels * k * k;
    let out_shape = Shape::new(s.batch, ks.batch, h, w);
    let mut out = Tensor4::zeros(out_shape);
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; rows * hw] };
    for b in 0..s.batch {
        let dst = out.item_mut(b);
        for (o, &bv) in bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(bv);
        }
        let x = if k == 1 {
            input.item(b)
        } else {
            im2col(input.item(b), s.channels, h, w, k, &mut cols);
            &cols
        };
        gemm(ks.batch, rows, hw, kernel.data(), false, x, false, 1.0, dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward(
    input: &Tensor4,
    kernel: &Tensor4,
    upstream: &Tensor4,
) -> Result<ConvGrads> {
    let s = input.shape();
    let ks = kernel.shape();
    let k = check(s, ks, ks.batch)?;
    Shape::new(s.batch, ks.batch, s.height, s.width).expect("conv2d_backward", upstream.shape())?;
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    let rows = s.channels * k * k;
    let mut grad_input = Tensor4::zeros(s);
    let mut grad_kernel = Tensor4::zeros(ks);
    let mut grad_bias = vec![0.0; ks.batch];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; rows * hw] };
    let mut dcols = vec![0.0; rows * hw];
    for b in 0..s.batch {
        let dy = upstream.item(b);
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb += dy[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        let x = if k == 1 {
            input.item(b)
        } else {
            im2col(input.item(b), s.channels, h, w, k, &mut cols);
            &cols
        };
        // dK += dY · Xᵀ
        gemm(ks.batch, hw, rows, dy, false, x, true, 1.0, grad_kernel.data_mut());
        // dX = Kᵀ · dY
        if k == 1 {
            gemm(rows, ks.batch, hw, kernel.data(), true, dy, false, 0.0, grad_input.item_mut(b));
        } else {
            gemm(rows, ks.batch, hw, kernel.data(), true, dy, false, 0.0, &mut dcols);
            col2im(&dcols, s.channels, h, w, k, grad_input.item_mut(b));
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    /// Direct quadruple loop with explicit zero padding.
    fn naive(input: &Tensor4, kernel: &Tensor4, bias: &[f64]) -> Tensor4 {
        let s = input.shape();
        let ks = kernel.shape();
        let pad = (ks.height / 2) as isize;
        Tensor4::from_fn(Shape::new(s.batch, ks.batch, s.height, s.width), |b, o, y, x| {
            let mut acc = bias[o];
            for c in 0..s.channels {
                for ky in 0..ks.height {
                    for kx in 0..ks.width {
                        let sy = y as isize + ky as isize - pad;
                        let sx = x as isize + kx as isize - pad;
                        if sy >= 0 && sx >= 0 && sy < s.height as isize && sx < s.width as isize {
                            acc += kernel.get(o, c, ky, kx) * input.get(b, c, sy as usize, sx as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_and_zero_kernels() {
        let x = random(Shape::new(2, 3, 5, 4), 1);
        let eye = Tensor4::from_fn(Shape::new(3, 3, 1, 1), |o, c, _, _| if o == c { 1.0 } else { 0.0 });
        assert_eq!(conv2d(&x, &eye, &[0.0; 3]).unwrap(), x);
        let zero = Tensor4::zeros(Shape::new(2, 3, 3, 3));
        let y = conv2d(&x, &zero, &[0.5, -1.5]).unwrap();
        for b in 0..2 {
            assert!(y.plane(b, 0).iter().all(|&v| v == 0.5));
            assert!(y.plane(b, 1).iter().all(|&v| v == -1.5));
        }
    }

    #[test]
    fn matches_naive_loop() {
        let x = random(Shape::new(2, 3, 6, 5), 2);
        for k in [1, 3, 5] {
            let kern = random(Shape::new(4, 3, k, k), 3);
            let bias = [0.1, -0.2, 0.3, 0.0];
            let fast = conv2d(&x, &kern, &bias).unwrap();
            let slow = naive(&x, &kern, &bias);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_malformed_kernels() {
        let x = random(Shape::new(1, 2, 4, 4), 2);
        assert!(conv2d(&x, &Tensor4::zeros(Shape::new(1, 2, 2, 2)), &[0.0]).is_err());
        assert!(conv2d(&x, &Tensor4::zeros(Shape::new(1, 3, 3, 3)), &[0.0]).is_err());
        assert!(conv2d(&x, &Tensor4::zeros(Shape::new(1, 2, 3, 3)), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        for k in [1, 3] {
            let x = random(Shape::new(1, 2, 6, 6), 4);
            let kern = random(Shape::new(3, 2, k, k), 5);
            let bias = vec![0.2, -0.1, 0.05];
            let weights = random(Shape::new(1, 3, 6, 6), 6);
            let objective = |x: &Tensor4, kern: &Tensor4, bias: &[f64]| {
                conv2d(x, kern, bias)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(weights.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let g = conv2d_backward(&x, &kern, &weights).unwrap();
            let eps = 1e-3;
            let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            for i in 0..x.len() {
                let (mut p, mut m) = (x.clone(), x.clone());
                p.data_mut()[i] += eps;
                m.data_mut()[i] -= eps;
                let n = (objective(&p, &kern, &bias) - objective(&m, &kern, &bias)) / (2.0 * eps);
                assert!(rel(g.input.data()[i], n) < 1e-4);
            }
            for i in 0..kern.len() {
                let (mut p, mut m) = (kern.clone(), kern.clone());
                p.data_mut()[i] += eps;
                m.data_mut()[i] -= eps;
                let n = (objective(&x, &p, &bias) - objective(&x, &m, &bias)) / (2.0 * eps);
                assert!(rel(g.kernel.data()[i], n) < 1e-4);
            }
            for i in 0..bias.len() {
                let (mut p, mut m) = (bias.clone(), bias.clone());
                p[i] += eps;
                m[i] -= eps;
                let n = (objective(&x, &kern, &p) - objective(&x, &kern, &m)) / (2.0 * eps);
                assert!(rel(g.bias[i], n) < 1e-4);
            }
        }
    }
}
