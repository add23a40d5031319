//! Stochastic gradient descent with classical momentum.

use crate::error::{Error, Result};

/// `v ← μv − lr·g; p ← p + v` for one parameter slice.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths");
    assert_eq!(params.len(), velocity.len(), "parameter and velocity lengths");
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

/// Momentum state for a fixed list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "slice counts");
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            sgd_step(p, g, v, self.lr, self.momentum);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step_without_momentum() {
        let mut p = [1.0, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0);
        assert_eq!(p, [1.0 - 0.1 * 0.5, -2.0 + 0.1]);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut p = [3.0];
        let mut v = [0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9);
        assert_eq!((p[0], v[0]), (3.0, 0.0));
        let mut v = [0.4];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9);
        assert_eq!(v[0], 0.9 * 0.4);
        assert_eq!(p[0], 3.0 + 0.9 * 0.4);
    }

    #[test]
    fn two_steps_on_quadratic() {
        // f(p) = p²/2, g = p; from p0 = 1 with lr 0.1 and μ 0.9:
        // v1 = -0.1, p1 = 0.9; v2 = -0.09 - 0.09 = -0.18, p2 = 0.72.
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let mut p = vec![1.0];
        for _ in 0..2 {
            let g = p.clone();
            opt.step(vec![p.as_mut_slice()], &[g.as_slice()]);
        }
        assert!((p[0] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(0.0, 0.5).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
        assert!(Sgd::new(0.1, -0.1).is_err());
    }
}
