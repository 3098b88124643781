//! Variable-metric proximity operators.
//!
//! `prox(g, gamma, B, s)` returns the unique minimizer of
//! `gamma * g(u) + 0.5 * ||u - s||_B^2`. The catalog covers the zero function,
//! the indicator of a Euclidean ball, the indicator of the preimage of a ball
//! under an invertible linear map, and a weighted l1 norm.
//!
//! Ball-type projections under a non-Euclidean geometry reduce to a monotone
//! one-dimensional secular equation in the Lagrange multiplier, which is
//! solved by safeguarded Newton iterations on a bisection bracket.

use nalgebra::linalg::{Cholesky, LU};

use crate::error::{Error, Result};
use crate::metric::{Matrix, MetricOperator, Vector};

/// Target accuracy on the constraint residual of a secular solve.
pub const SECULAR_TOL: f64 = 1e-12;
/// Iteration cap of the secular solver.
pub const SECULAR_MAX_ITER: usize = 200;
/// Relative slack accepted by [`ProxFunction::domain_check`] on ball boundaries.
pub const DOMAIN_SLACK: f64 = 1e-9;

const L1_MAX_SWEEPS: usize = 100_000;

/// Convex, proper, lower semicontinuous penalty with a computable prox.
#[derive(Debug, Clone)]
pub enum ProxFunction {
    Zero,
    /// Indicator of `{s : ||s - center|| <= radius}`.
    Ball { radius: f64, center: Vector },
    /// Indicator of `{s : ||T s - center|| <= radius}` for an invertible `T`.
    MetricBall { map: Matrix, map_inverse: Matrix, radius: f64, center: Vector },
    /// `weight * ||s||_1`.
    L1 { weight: f64 },
}

impl ProxFunction {
    pub fn zero() -> Self {
        ProxFunction::Zero
    }

    pub fn ball(radius: f64, center: Vector) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
        }
        Ok(ProxFunction::Ball { radius, center })
    }

    pub fn metric_ball(map: Matrix, radius: f64, center: Vector) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
        }
        if !map.is_square() || map.nrows() != center.len() {
            return Err(Error::DimensionMismatch { expected: center.len(), found: map.ncols() });
        }
        let map_inverse = LU::new(map.clone())
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("metric-ball map is singular".into()))?;
        Ok(ProxFunction::MetricBall { map, map_inverse, radius, center })
    }

    pub fn l1(weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("l1 weight must be nonnegative, got {weight}")));
        }
        Ok(ProxFunction::L1 { weight })
    }

    fn expected_dim(&self) -> Option<usize> {
        match self {
            ProxFunction::Ball { center, .. } | ProxFunction::MetricBall { center, .. } => {
                Some(center.len())
            }
            _ => None,
        }
    }

    fn check_dim(&self, s: &Vector) -> Result<()> {
        match self.expected_dim() {
            Some(q) if q != s.len() => Err(Error::DimensionMismatch { expected: q, found: s.len() }),
            _ => Ok(()),
        }
    }

    /// Membership in `dom g`, with a relative slack of [`DOMAIN_SLACK`] on ball boundaries.
    pub fn domain_check(&self, s: &Vector) -> bool {
        if self.check_dim(s).is_err() || s.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match self {
            ProxFunction::Zero | ProxFunction::L1 { .. } => true,
            ProxFunction::Ball { radius, center } => (s - center).norm() <= radius * (1.0 + DOMAIN_SLACK),
            ProxFunction::MetricBall { map, radius, center, .. } => {
                (map * s - center).norm() <= radius * (1.0 + DOMAIN_SLACK)
            }
        }
    }

    /// `g(s)`, `+inf` outside the domain.
    pub fn evaluate(&self, s: &Vector) -> f64 {
        if !self.domain_check(s) {
            return f64::INFINITY;
        }
        match self {
            ProxFunction::L1 { weight } => weight * s.lp_norm(1),
            _ => 0.0,
        }
    }
}

fn check_inputs(g: &ProxFunction, gamma: f64, b: &MetricOperator, s: &Vector) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if s.len() != b.dim() {
        return Err(Error::DimensionMismatch { expected: b.dim(), found: s.len() });
    }
    g.check_dim(s)
}

/// `prox_{gamma g}^B(s)`.
pub fn prox(g: &ProxFunction, gamma: f64, b: &MetricOperator, s: &Vector) -> Result<Vector> {
    check_inputs(g, gamma, b, s)?;
    match g {
        ProxFunction::Zero => Ok(s.clone()),
        ProxFunction::Ball { radius, center } => project_ball_in_metric(b, center, *radius, s),
        ProxFunction::MetricBall { map, map_inverse, radius, center } => {
            let image = map * s;
            if (&image - center).norm() <= *radius {
                return Ok(s.clone());
            }
            // Substituting x = T u turns the problem into a projection of T s
            // onto the ball under the metric T^{-T} B T^{-1}.
            let pulled = map_inverse.transpose() * b.matrix() * map_inverse;
            let pulled = MetricOperator::new((&pulled + pulled.transpose()) * 0.5)?;
            let x = project_ball_in_metric(&pulled, center, *radius, &image)?;
            Ok(map_inverse * x)
        }
        ProxFunction::L1 { weight } => prox_l1(gamma * weight, b, s),
    }
}

/// `prox_{gamma g}^B(s)` through `sqrt(B)^{-1} prox_{gamma g(sqrt(B)^{-1} .)}(sqrt(B) s)`.
///
/// The transformed problems are Euclidean: soft-thresholding for `l1` under a
/// diagonal metric, and projections onto ellipsoids for the ball kinds.
pub fn prox_via_sqrt(g: &ProxFunction, gamma: f64, b: &MetricOperator, s: &Vector) -> Result<Vector> {
    check_inputs(g, gamma, b, s)?;
    let z = b.sqrt_apply(s, false)?;
    let y = match g {
        ProxFunction::Zero => return Ok(s.clone()),
        ProxFunction::L1 { weight } => {
            if !b.is_diagonal() {
                return Err(Error::Unsupported(
                    "l1 composed with a non-diagonal square root has no closed-form prox".into(),
                ));
            }
            let thresholds = b.eigenvalues().map(|l| gamma * weight / l.sqrt());
            z.zip_map(&thresholds, soft_threshold)
        }
        ProxFunction::Ball { radius, center } => {
            let shape = b.inverse_matrix();
            let offset = b.sqrt_apply(center, false)?;
            project_onto_ellipsoid(&shape, &offset, *radius, &z)?
        }
        ProxFunction::MetricBall { map, map_inverse, radius, center } => {
            let root_inv = b.sqrt_matrix(true);
            let t = map * &root_inv;
            let shape = t.transpose() * &t;
            let offset = b.sqrt_apply(&(map_inverse * center), false)?;
            project_onto_ellipsoid(&((&shape + shape.transpose()) * 0.5), &offset, *radius, &z)?
        }
    };
    b.sqrt_apply(&y, true)
}

/// `||prox_{gamma g}^B(s + gamma h) - s||`; zero iff `B h` is a subgradient of `g` at `s`.
pub fn fixed_point_residual(
    g: &ProxFunction,
    gamma: f64,
    b: &MetricOperator,
    s: &Vector,
    h: &Vector,
) -> Result<f64> {
    if !g.domain_check(s) {
        return Err(Error::DomainViolation);
    }
    if h.len() != s.len() {
        return Err(Error::DimensionMismatch { expected: s.len(), found: h.len() });
    }
    let p = prox(g, gamma, b, &(s + h * gamma))?;
    Ok((p - s).norm())
}

/// Residual of the optimality certificate `-gamma^{-1} B (p - s) in dg(p)`.
///
/// The value is scale-normalized and includes the feasibility gap of `p`; it
/// is zero (up to rounding) exactly when `p = prox_{gamma g}^B(s)`.
pub fn certificate_residual(
    g: &ProxFunction,
    gamma: f64,
    b: &MetricOperator,
    s: &Vector,
    p: &Vector,
) -> Result<f64> {
    check_inputs(g, gamma, b, s)?;
    let v = b.apply(&(s - p))? / gamma;
    let scale = 1.0 + v.norm();
    let residual = match g {
        ProxFunction::Zero => v.norm() / scale,
        ProxFunction::Ball { radius, center } => {
            normal_cone_residual(&v, &(p - center), *radius, |d| d.clone()) / scale
        }
        ProxFunction::MetricBall { map, radius, center, .. } => {
            normal_cone_residual(&v, &(map * p - center), *radius, |d| map.transpose() * d) / scale
        }
        ProxFunction::L1 { weight } => {
            let w = *weight;
            let worst = p.iter().zip(v.iter()).fold(0.0_f64, |acc, (&pj, &vj)| {
                let r = if pj != 0.0 { (vj - w * pj.signum()).abs() } else { (vj.abs() - w).max(0.0) };
                acc.max(r)
            });
            worst / (1.0 + w)
        }
    };
    Ok(residual)
}

/// Distance of `v` from the normal cone `{lambda * normal_of(d), lambda >= 0}`,
/// where `d` is the displacement of the (mapped) point from the ball center.
fn normal_cone_residual(v: &Vector, d: &Vector, radius: f64, normal_of: impl Fn(&Vector) -> Vector) -> f64 {
    let dist = d.norm();
    let infeasibility = ((dist - radius) / radius).max(0.0);
    if dist < radius * (1.0 - 1e-9) {
        return v.norm() + infeasibility;
    }
    let normal = normal_of(d);
    let nn = normal.norm();
    if nn == 0.0 {
        return v.norm() + infeasibility;
    }
    let unit = normal / nn;
    let lambda = v.dot(&unit).max(0.0);
    (v - unit * lambda).norm() + infeasibility + ((dist - radius) / radius).abs()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `argmin_{||x - center|| <= radius} 0.5 ||x - s||_M^2`.
///
/// With `M = Q diag(l) Q^T` and `y = Q^T (s - center)`, the minimizer on the
/// boundary is `center + Q diag(l / (l + lambda)) y` for the unique
/// `lambda >= 0` solving `||diag(l / (l + lambda)) y|| = radius`.
pub fn project_ball_in_metric(m: &MetricOperator, center: &Vector, radius: f64, s: &Vector) -> Result<Vector> {
    let d = s - center;
    let dist = d.norm();
    if dist <= radius {
        return Ok(s.clone());
    }
    if m.is_diagonal() && m.eigenvalues().iter().all(|&l| l == m.eigenvalues()[0]) {
        return Ok(center + d * (radius / dist));
    }
    let q = m.eigenvectors();
    let l = m.eigenvalues();
    let y = q.tr_mul(&d);
    let coords = |lambda: f64| Vector::from_iterator(y.len(), y.iter().zip(l.iter()).map(|(&yj, &lj)| lj * yj / (lj + lambda)));
    let residual = |lambda: f64| {
        let x = coords(lambda);
        let norm = x.norm();
        let dnorm = -x
            .iter()
            .zip(l.iter())
            .map(|(&xj, &lj)| xj * xj / (lj + lambda))
            .sum::<f64>()
            / norm.max(f64::MIN_POSITIVE);
        (norm - radius, dnorm)
    };
    let hi = m.max_eigenvalue() * dist / radius;
    let lambda = solve_secular(residual, hi, radius)?;
    let x = coords(lambda);
    let x = &x * (radius / x.norm());
    Ok(center + q * x)
}

/// Euclidean projection of `z` onto `{y : (y - center)^T A (y - center) <= radius^2}`.
pub fn project_onto_ellipsoid(shape: &Matrix, center: &Vector, radius: f64, z: &Vector) -> Result<Vector> {
    let a = MetricOperator::new(shape.clone())?;
    let d = z - center;
    let level = a.norm_sq(&d)?.sqrt();
    if level <= radius {
        return Ok(z.clone());
    }
    let q = a.eigenvectors();
    let mu = a.eigenvalues();
    let zeta = q.tr_mul(&d);
    let coords = |lambda: f64| Vector::from_iterator(zeta.len(), zeta.iter().zip(mu.iter()).map(|(&zj, &mj)| zj / (1.0 + lambda * mj)));
    let residual = |lambda: f64| {
        let w = coords(lambda);
        let level = w.iter().zip(mu.iter()).map(|(&wj, &mj)| mj * wj * wj).sum::<f64>().sqrt();
        let dlevel_sq = -2.0
            * w.iter()
                .zip(mu.iter())
                .map(|(&wj, &mj)| mj * mj * wj * wj / (1.0 + lambda * mj))
                .sum::<f64>();
        (level - radius, dlevel_sq / (2.0 * level.max(f64::MIN_POSITIVE)))
    };
    let hi = (level / radius - 1.0) / a.min_eigenvalue();
    let lambda = solve_secular(residual, hi, radius)?;
    let w = coords(lambda);
    let level = w.iter().zip(mu.iter()).map(|(&wj, &mj)| mj * wj * wj).sum::<f64>().sqrt();
    Ok(center + q * (w * (radius / level)))
}

/// Root of a decreasing function on `[0, hi]` with `f(0) > 0 >= f(hi)`.
///
/// Newton steps are taken while they stay inside the current bracket;
/// otherwise the bracket is bisected.
fn solve_secular(f: impl Fn(f64) -> (f64, f64), hi: f64, radius: f64) -> Result<f64> {
    let tol = SECULAR_TOL * (1.0 + radius);
    let (mut lo, mut hi) = (0.0_f64, hi.max(f64::MIN_POSITIVE));
    let mut lambda = 0.5 * hi;
    let mut last = f64::INFINITY;
    for _ in 0..SECULAR_MAX_ITER {
        let (value, slope) = f(lambda);
        last = value;
        if value.abs() <= tol {
            return Ok(lambda);
        }
        if value > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
            return if value.abs() <= 1e3 * tol {
                Ok(lambda)
            } else {
                Err(Error::NonConvergence { iterations: SECULAR_MAX_ITER, residual: value.abs() })
            };
        }
        let newton = lambda - value / slope;
        lambda = if slope < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(Error::NonConvergence { iterations: SECULAR_MAX_ITER, residual: last.abs() })
}

/// `argmin threshold * ||u||_1 + 0.5 ||u - s||_B^2`.
fn prox_l1(threshold: f64, b: &MetricOperator, s: &Vector) -> Result<Vector> {
    if b.is_diagonal() {
        let diag = b.eigenvalues();
        return Ok(Vector::from_iterator(
            s.len(),
            s.iter().zip(diag.iter()).map(|(&sj, &bj)| soft_threshold(sj, threshold / bj)),
        ));
    }
    let m = b.matrix();
    let q = s.len();
    let bs = m * s;
    let mut u = s.clone();
    let mut converged = false;
    for _ in 0..L1_MAX_SWEEPS {
        let mut change = 0.0_f64;
        for j in 0..q {
            // (B u)_j excluding the diagonal contribution of u_j.
            let off: f64 = (0..q).filter(|&k| k != j).map(|k| m[(j, k)] * u[k]).sum();
            let next = soft_threshold(bs[j] - off, threshold) / m[(j, j)];
            change = change.max((next - u[j]).abs());
            u[j] = next;
        }
        if change <= 1e-15 * (1.0 + u.amax()) {
            converged = true;
            break;
        }
    }
    // Polish on the detected support: B_AA u_A = (B s)_A - threshold * sign(u_A).
    let support: Vec<usize> = (0..q).filter(|&j| u[j] != 0.0).collect();
    if !support.is_empty() {
        let k = support.len();
        let sub = Matrix::from_fn(k, k, |a, c| m[(support[a], support[c])]);
        let rhs = Vector::from_fn(k, |a, _| bs[support[a]] - threshold * u[support[a]].signum());
        if let Some(chol) = Cholesky::new(sub) {
            let ua = chol.solve(&rhs);
            let mut polished = Vector::zeros(q);
            for (a, &j) in support.iter().enumerate() {
                polished[j] = ua[a];
            }
            let grad = m * (s - &polished);
            let consistent = support.iter().enumerate().all(|(a, &j)| ua[a] != 0.0 && ua[a].signum() == u[j].signum())
                && (0..q)
                    .filter(|j| !support.contains(j))
                    .all(|j| grad[j].abs() <= threshold * (1.0 + 1e-12) + 1e-14);
            if consistent {
                return Ok(polished);
            }
        }
    } else if (m * s).amax() <= threshold {
        return Ok(Vector::zeros(q));
    }
    if converged {
        Ok(u)
    } else {
        Err(Error::NonConvergence { iterations: L1_MAX_SWEEPS, residual: f64::NAN })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn unit_ball() -> ProxFunction {
        ProxFunction::ball(1.0, v(&[0.0, 0.0])).unwrap()
    }

    #[test]
    fn zero_prox_is_identity() {
        let b = MetricOperator::from_diagonal(&[2.0, 5.0]).unwrap();
        let s = v(&[0.3, -7.0]);
        assert_eq!(prox(&ProxFunction::Zero, 0.7, &b, &s).unwrap(), s);
        assert_eq!(prox_via_sqrt(&ProxFunction::Zero, 0.7, &b, &s).unwrap(), s);
    }

    #[test]
    fn euclidean_ball_projection() {
        let p = prox(&unit_ball(), 1.0, &MetricOperator::identity(2), &v(&[2.0, 0.0])).unwrap();
        assert!((p - v(&[1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn boundary_point_is_returned_unchanged() {
        let b = MetricOperator::from_diagonal(&[1.0, 4.0]).unwrap();
        let s = v(&[0.6, 0.8]);
        assert_eq!(prox(&unit_ball(), 1.0, &b, &s).unwrap(), s);
    }

    #[test]
    fn soft_thresholding_by_hand() {
        let g = ProxFunction::l1(1.0).unwrap();
        let id = MetricOperator::identity(2);
        let p = prox_via_sqrt(&g, 1.0, &id, &v(&[2.0, -0.5])).unwrap();
        assert_eq!(p, v(&[1.0, 0.0]));
        assert_eq!(prox(&g, 1.0, &id, &v(&[2.0, -0.5])).unwrap(), v(&[1.0, 0.0]));
    }

    #[test]
    fn isotropic_metric_keeps_euclidean_projection() {
        let b = MetricOperator::from_diagonal(&[4.0, 4.0]).unwrap();
        let p = prox_via_sqrt(&unit_ball(), 1.0, &b, &v(&[2.0, 0.0])).unwrap();
        assert!((p - v(&[1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn fixed_point_residual_cases() {
        let id = MetricOperator::identity(2);
        let zero = Vector::zeros(2);
        assert_eq!(fixed_point_residual(&ProxFunction::Zero, 1.0, &id, &v(&[1.0, 2.0]), &zero).unwrap(), 0.0);
        assert_eq!(fixed_point_residual(&unit_ball(), 1.0, &id, &v(&[0.2, 0.1]), &zero).unwrap(), 0.0);
        // Inward h on the boundary is not in the normal cone: the step moves inside.
        let r = fixed_point_residual(&unit_ball(), 1.0, &id, &v(&[1.0, 0.0]), &v(&[-0.3, 0.0])).unwrap();
        assert!((r - 0.3).abs() < 1e-12);
        // Outward h is in the normal cone.
        let r = fixed_point_residual(&unit_ball(), 1.0, &id, &v(&[1.0, 0.0]), &v(&[0.3, 0.0])).unwrap();
        assert!(r <= 1e-10);
        assert!(matches!(
            fixed_point_residual(&unit_ball(), 1.0, &id, &v(&[3.0, 0.0]), &zero),
            Err(Error::DomainViolation)
        ));
    }

    #[test]
    fn input_validation() {
        let id = MetricOperator::identity(2);
        assert!(prox(&unit_ball(), 0.0, &id, &v(&[1.0, 1.0])).is_err());
        assert!(prox(&unit_ball(), 1.0, &id, &v(&[1.0, 1.0, 1.0])).is_err());
        assert!(ProxFunction::ball(-1.0, v(&[0.0])).is_err());
        assert!(ProxFunction::metric_ball(Matrix::zeros(2, 2), 1.0, v(&[0.0, 0.0])).is_err());
        let full = MetricOperator::new(Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!(matches!(
            prox_via_sqrt(&ProxFunction::l1(1.0).unwrap(), 1.0, &full, &v(&[1.0, 1.0])),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn evaluate_matches_domain() {
        let g = unit_ball();
        assert_eq!(g.evaluate(&v(&[0.5, 0.5])), 0.0);
        assert_eq!(g.evaluate(&v(&[1.5, 0.5])), f64::INFINITY);
        assert_eq!(ProxFunction::l1(2.0).unwrap().evaluate(&v(&[1.0, -3.0])), 8.0);
    }
}
