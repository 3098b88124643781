//! Positive-definite metric operators.
//!
//! A [`MetricOperator`] wraps a symmetric positive-definite matrix together
//! with its spectral decomposition, which serves the inverse, the square root
//! and the secular-equation projections in [`crate::prox`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default relative tolerance used by metric computations.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Smallest admissible ratio between the extreme eigenvalues.
const CONDITION_FLOOR: f64 = 1e-12;

/// Symmetric positive-definite `q x q` operator with a cached eigendecomposition.
#[derive(Debug, Clone)]
pub struct MetricOperator {
    matrix: Matrix,
    eigenvalues: Vector,
    eigenvectors: Matrix,
    diagonal: bool,
    declared_bounds: Option<(f64, f64)>,
    tol: f64,
}

impl PartialEq for MetricOperator {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl MetricOperator {
    pub fn new(matrix: Matrix) -> Result<Self> {
        Self::build(matrix, None)
    }

    /// Builds the operator and checks every eigenvalue against `[v_min, v_max]`.
    pub fn with_bounds(matrix: Matrix, v_min: f64, v_max: f64) -> Result<Self> {
        if !(v_min > 0.0 && v_min <= v_max) {
            return Err(Error::InvalidArgument(format!(
                "declared bounds must satisfy 0 < v_min <= v_max, got ({v_min}, {v_max})"
            )));
        }
        Self::build(matrix, Some((v_min, v_max)))
    }

    pub fn identity(q: usize) -> Self {
        Self::from_diagonal(&vec![1.0; q]).expect("identity is positive definite")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    fn build(matrix: Matrix, declared_bounds: Option<(f64, f64)>) -> Result<Self> {
        let q = matrix.nrows();
        if q == 0 || matrix.ncols() != q {
            return Err(Error::DimensionMismatch { expected: q.max(1), found: matrix.ncols() });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("metric has non-finite entries".into()));
        }
        for i in 0..q {
            for j in (i + 1)..q {
                let gap = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if gap > 1e-12 * (1.0 + matrix[(i, j)].abs()) {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let diagonal = (0..q).all(|i| (0..q).all(|j| i == j || matrix[(i, j)] == 0.0));
        let (eigenvalues, eigenvectors) = if diagonal {
            (matrix.diagonal(), Matrix::identity(q, q))
        } else {
            let eig = SymmetricEigen::try_new(matrix.clone(), f64::EPSILON, 10_000).ok_or(
                Error::NonConvergence { iterations: 10_000, residual: f64::NAN },
            )?;
            (eig.eigenvalues, eig.eigenvectors)
        };
        let min_eig = eigenvalues.min();
        let max_eig = eigenvalues.max();
        if !(min_eig > CONDITION_FLOOR * max_eig) || max_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eig, max_eig });
        }
        if let Some((v_min, v_max)) = declared_bounds {
            for &eig in eigenvalues.iter() {
                if eig < v_min * (1.0 - DEFAULT_TOL) || eig > v_max * (1.0 + DEFAULT_TOL) {
                    return Err(Error::BoundsViolation { eig, v_min, v_max });
                }
            }
        }
        Ok(Self { matrix, eigenvalues, eigenvectors, diagonal, declared_bounds, tol: DEFAULT_TOL })
    }

    /// Overrides the relative tolerance used by consumers of this metric.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &Vector {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn declared_bounds(&self) -> Option<(f64, f64)> {
        self.declared_bounds
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.max()
    }

    fn check_dim(&self, v: &Vector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        Ok(())
    }

    /// `B v`.
    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        self.check_dim(v)?;
        Ok(&self.matrix * v)
    }

    /// `f(B) v` through the spectral decomposition.
    fn spectral_apply(&self, v: &Vector, f: impl Fn(f64) -> f64) -> Vector {
        if self.diagonal {
            return Vector::from_iterator(
                v.len(),
                v.iter().zip(self.eigenvalues.iter()).map(|(x, &l)| x * f(l)),
            );
        }
        let mut coords = self.eigenvectors.tr_mul(v);
        for (c, &l) in coords.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= f(l);
        }
        &self.eigenvectors * coords
    }

    /// `B^{-1} v`.
    pub fn apply_inverse(&self, v: &Vector) -> Result<Vector> {
        self.check_dim(v)?;
        Ok(self.spectral_apply(v, |l| 1.0 / l))
    }

    /// `sqrt(B) v`, or `sqrt(B)^{-1} v` when `inverse` is set.
    pub fn sqrt_apply(&self, v: &Vector, inverse: bool) -> Result<Vector> {
        self.check_dim(v)?;
        Ok(if inverse {
            self.spectral_apply(v, |l| 1.0 / l.sqrt())
        } else {
            self.spectral_apply(v, f64::sqrt)
        })
    }

    /// `<B u, v>`.
    pub fn inner(&self, u: &Vector, v: &Vector) -> Result<f64> {
        self.check_dim(u)?;
        self.check_dim(v)?;
        Ok((&self.matrix * u).dot(v))
    }

    /// `||v||_B^2`.
    pub fn norm_sq(&self, v: &Vector) -> Result<f64> {
        self.inner(v, v)
    }

    /// Dense `B^{-1}`.
    pub fn inverse_matrix(&self) -> Matrix {
        let q = self.dim();
        let scaled = Matrix::from_fn(q, q, |i, j| self.eigenvectors[(i, j)] / self.eigenvalues[j]);
        let inv = scaled * self.eigenvectors.transpose();
        (&inv + inv.transpose()) * 0.5
    }

    /// Dense `sqrt(B)` (or its inverse).
    pub fn sqrt_matrix(&self, inverse: bool) -> Matrix {
        let q = self.dim();
        let scaled = Matrix::from_fn(q, q, |i, j| {
            let l = self.eigenvalues[j].sqrt();
            self.eigenvectors[(i, j)] * if inverse { 1.0 / l } else { l }
        });
        let m = scaled * self.eigenvectors.transpose();
        (&m + m.transpose()) * 0.5
    }
}

/// State-dependent metric map.
pub type MetricFn = Arc<dyn Fn(&Vector) -> Result<MetricOperator> + Send + Sync>;

/// How the metric `B_{k+1}` is chosen from the current iterate.
#[derive(Clone)]
pub enum MetricChoice {
    /// One operator for the whole run; its factorization is shared.
    Constant(Arc<MetricOperator>),
    /// `B_{k+1} = metric(S_k)`.
    StateDependent(MetricFn),
}

impl std::fmt::Debug for MetricChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricChoice::Constant(b) => f.debug_tuple("Constant").field(&b.dim()).finish(),
            MetricChoice::StateDependent(_) => f.write_str("StateDependent(..)"),
        }
    }
}

impl MetricChoice {
    pub fn constant(b: MetricOperator) -> Self {
        MetricChoice::Constant(Arc::new(b))
    }

    pub fn identity(q: usize) -> Self {
        Self::constant(MetricOperator::identity(q))
    }

    pub fn state_dependent<F>(f: F) -> Self
    where
        F: Fn(&Vector) -> Result<MetricOperator> + Send + Sync + 'static,
    {
        MetricChoice::StateDependent(Arc::new(f))
    }

    pub fn at(&self, s: &Vector) -> Result<Arc<MetricOperator>> {
        match self {
            MetricChoice::Constant(b) => Ok(Arc::clone(b)),
            MetricChoice::StateDependent(f) => f(s).map(Arc::new),
        }
    }
}

/// `<u, v>_B = <B u, v>`.
pub fn b_inner(b: &MetricOperator, u: &Vector, v: &Vector) -> Result<f64> {
    b.inner(u, v)
}

/// Solves `B x = v`.
pub fn apply_inverse(b: &MetricOperator, v: &Vector) -> Result<Vector> {
    b.apply_inverse(v)
}

/// `sqrt(B) v` or `sqrt(B)^{-1} v`.
pub fn sqrt_apply(b: &MetricOperator, v: &Vector, inverse: bool) -> Result<Vector> {
    b.sqrt_apply(v, inverse)
}

/// Lipschitz and spectral constants of a problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessProfile {
    per_component_lipschitz: Vec<f64>,
    aggregate_l: f64,
    gradient_lipschitz: f64,
    v_min: f64,
    v_max: f64,
}

impl SmoothnessProfile {
    pub fn new(
        per_component_lipschitz: Vec<f64>,
        gradient_lipschitz: f64,
        v_min: f64,
        v_max: f64,
    ) -> Result<Self> {
        if per_component_lipschitz.is_empty() {
            return Err(Error::InvalidArgument("no per-component constants".into()));
        }
        let all_positive = per_component_lipschitz.iter().all(|&l| l > 0.0 && l.is_finite());
        if !all_positive || !(gradient_lipschitz > 0.0) || !(v_min > 0.0) || v_max < v_min {
            return Err(Error::InvalidArgument(
                "smoothness constants must be positive with v_min <= v_max".into(),
            ));
        }
        let n = per_component_lipschitz.len() as f64;
        let aggregate_l =
            (per_component_lipschitz.iter().map(|l| l * l).sum::<f64>() / n).sqrt();
        Ok(Self { per_component_lipschitz, aggregate_l, gradient_lipschitz, v_min, v_max })
    }

    /// Profile where every component shares the constant `l`.
    pub fn uniform(n: usize, l: f64, gradient_lipschitz: f64, v_min: f64, v_max: f64) -> Result<Self> {
        Self::new(vec![l; n.max(1)], gradient_lipschitz, v_min, v_max)
    }

    pub fn per_component_lipschitz(&self) -> &[f64] {
        &self.per_component_lipschitz
    }

    /// `L` with `L^2 = n^{-1} sum_i L_i^2`.
    pub fn aggregate_l(&self) -> f64 {
        self.aggregate_l
    }

    pub fn gradient_lipschitz(&self) -> f64 {
        self.gradient_lipschitz
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }
}
