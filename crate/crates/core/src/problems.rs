//! Small reference instances.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::metric::{Matrix, MetricChoice, SmoothnessProfile, Vector};
use crate::oracle::{exact_finite_sum_oracle, quadratic_components, ExactFiniteSumOracle};
use crate::prox::ProxFunction;
use crate::seed::{derive_seed, rng_from_seed, StreamTag};

/// `W(s) = n^{-1} Σ_i (½ sᵀ A_i s - c_iᵀ s)` over a Euclidean ball that cuts
/// off the unconstrained minimizer.
#[derive(Debug, Clone)]
pub struct QuadraticToy {
    pub a: Vec<Matrix>,
    pub c: Vec<Vector>,
    pub radius: f64,
}

impl QuadraticToy {
    /// Components with spectra in roughly `[0.5, 2.5]`; the radius is half the
    /// norm of the unconstrained minimizer.
    pub fn generate(n: usize, q: usize, seed: u64) -> Result<Self> {
        if n == 0 || q == 0 {
            return Err(Error::InvalidArgument("n and q must be positive".into()));
        }
        let mut rng = rng_from_seed(derive_seed(seed, 0, 0, 0, StreamTag::Synthetic));
        let mut a = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for _ in 0..n {
            let m = Matrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
            let sym = &m * m.transpose() / (q as f64) + Matrix::identity(q, q) * 0.5;
            let top = sym.symmetric_eigenvalues().max();
            a.push(sym * (2.5 / top.max(2.5)));
            c.push(Vector::from_fn(q, |_, _| 1.0 + rng.sample::<f64, StandardNormal>(StandardNormal)));
        }
        let mut toy = QuadraticToy { a, c, radius: 1.0 };
        let free = toy
            .mean_matrix()
            .lu()
            .solve(&toy.mean_vector())
            .ok_or_else(|| Error::InvalidArgument("singular mean matrix".into()))?;
        toy.radius = 0.5 * free.norm();
        Ok(toy)
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.c[0].len()
    }

    pub fn mean_matrix(&self) -> Matrix {
        self.a.iter().fold(Matrix::zeros(self.dim(), self.dim()), |acc, a| acc + a) / self.n() as f64
    }

    pub fn mean_vector(&self) -> Vector {
        self.c.iter().fold(Vector::zeros(self.dim()), |acc, c| acc + c) / self.n() as f64
    }

    pub fn objective(&self, s: &Vector) -> f64 {
        0.5 * s.dot(&(self.mean_matrix() * s)) - self.mean_vector().dot(s)
    }

    pub fn constraint(&self) -> ProxFunction {
        ProxFunction::Ball {
            radius: self.radius,
            center: Vector::zeros(self.dim()),
        }
    }

    pub fn oracle(&self) -> Result<ExactFiniteSumOracle> {
        let comps = quadratic_components(&self.a, &self.c)?;
        Ok(exact_finite_sum_oracle(comps, self.dim(), MetricChoice::identity(self.dim()))?
            .with_domain(self.constraint()))
    }

    /// Constants for the identity metric.
    pub fn smoothness(&self) -> Result<SmoothnessProfile> {
        let per: Vec<f64> = self
            .a
            .iter()
            .map(|a| a.symmetric_eigenvalues().abs().max())
            .collect();
        let lw = self.mean_matrix().symmetric_eigenvalues().max();
        SmoothnessProfile::new(per, lw, 1.0, 1.0)
    }

    pub fn objective_fn(self: &Arc<Self>) -> crate::algorithms::ObjectiveFn {
        let me = Arc::clone(self);
        Arc::new(move |s: &Vector| me.objective(s))
    }
}
