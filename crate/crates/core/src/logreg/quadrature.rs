//! Gauss–Hermite quadrature for Gaussian expectations.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes used by the logistic model.
pub const DEFAULT_NODES: usize = 128;

/// Nodes and weights for `∫ e^{-x²} f(x) dx ≈ Σ w_j f(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Roots of the orthonormal Hermite polynomial found by Newton's method.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("at least one node required".into()));
        }
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let (mut p1, mut p2) = (pim4, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * (1.0 + z.abs()) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence {
                    iterations: 100,
                    residual: f64::NAN,
                });
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        Ok(GaussHermite { nodes: x, weights: w })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Z)]` for `Z ~ N(mean, var)`.
    pub fn gaussian_expectation<F: Fn(f64) -> f64>(&self, mean: f64, var: f64, f: F) -> f64 {
        let scale = (2.0 * var).sqrt();
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum();
        sum / PI.sqrt()
    }

    /// `ln E[exp(f(Z))]` for `Z ~ N(mean, var)`, evaluated in log space.
    pub fn gaussian_log_expectation<F: Fn(f64) -> f64>(&self, mean: f64, var: f64, log_f: F) -> f64 {
        let scale = (2.0 * var).sqrt();
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&x, &w)| w.ln() + log_f(mean + scale * x))
            .collect();
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln() - 0.5 * PI.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_moments() {
        for n in [1, 2, 5, 20, 128] {
            let gh = GaussHermite::new(n).unwrap();
            let s0: f64 = gh.weights().iter().sum();
            assert!((s0 - PI.sqrt()).abs() < 1e-12, "n={n}: {s0}");
            if n >= 2 {
                let s2: f64 = gh.nodes().iter().zip(gh.weights()).map(|(x, w)| w * x * x).sum();
                assert!((s2 - PI.sqrt() / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_moments() {
        let gh = GaussHermite::new(DEFAULT_NODES).unwrap();
        assert!((gh.gaussian_expectation(1.5, 0.3, |z| z) - 1.5).abs() < 1e-13);
        let m4 = gh.gaussian_expectation(0.0, 2.0, |z| z.powi(4));
        assert!((m4 - 12.0).abs() < 1e-10);
        let lg = gh.gaussian_log_expectation(0.0, 1.0, |z| z);
        assert!((lg - 0.5).abs() < 1e-12);
    }
}
