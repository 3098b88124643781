//! Test-side oracles, written independently of the library code paths.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Exp1, StandardNormal};
use spider_core::{Matrix, MetricOperator, ProxFunction, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, q: usize, scale: f64) -> Vector {
    Vector::from_fn(q, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// SPD matrix with eigenvalues roughly in `[0.2, 5]`.
pub fn random_spd_matrix(rng: &mut ChaCha8Rng, q: usize) -> Matrix {
    let m = Matrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &m * m.transpose() / q as f64 + Matrix::identity(q, q) * 0.2;
    (&s + s.transpose()) * 0.5
}

pub fn random_metric(rng: &mut ChaCha8Rng, q: usize, diagonal: bool) -> MetricOperator {
    if diagonal {
        let d: Vec<f64> = (0..q).map(|_| 0.2 + 3.0 * rng.random::<f64>()).collect();
        MetricOperator::from_diagonal(&d).unwrap()
    } else {
        MetricOperator::new(random_spd_matrix(rng, q)).unwrap()
    }
}

/// Well-conditioned invertible matrix.
pub fn random_invertible(rng: &mut ChaCha8Rng, q: usize) -> Matrix {
    let m = Matrix::from_fn(q, q, |_, _| 0.4 * rng.sample::<f64, _>(StandardNormal));
    m + Matrix::identity(q, q) * 1.5
}

pub const CATALOG: [&str; 4] = ["zero", "ball", "metric_ball", "l1"];

pub fn random_g(rng: &mut ChaCha8Rng, kind: &str, q: usize) -> ProxFunction {
    match kind {
        "zero" => ProxFunction::zero(),
        "ball" => {
            let radius = 0.2 + 2.0 * rng.random::<f64>();
            ProxFunction::ball(radius, gaussian_vector(rng, q, 0.5)).unwrap()
        }
        "metric_ball" => {
            let radius = 0.2 + 2.0 * rng.random::<f64>();
            let map = random_invertible(rng, q);
            ProxFunction::metric_ball(map, radius, gaussian_vector(rng, q, 0.5)).unwrap()
        }
        "l1" => ProxFunction::l1(0.05 + rng.random::<f64>()).unwrap(),
        other => panic!("unknown kind {other}"),
    }
}

/// `PG(1, c)` by its infinite convolution of exponentials, truncated at `terms`.
pub fn pg_series(c: f64, terms: usize, rng: &mut ChaCha8Rng) -> f64 {
    let c2 = c * c / (4.0 * PI * PI);
    let mut acc = 0.0;
    for k in 1..=terms {
        let g: f64 = rng.sample(Exp1);
        let h = k as f64 - 0.5;
        acc += g / (h * h + c2);
    }
    acc / (2.0 * PI * PI)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0_f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

/// Critical value of the two-sample KS test at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Minimizer of `½ sᵀ A s - cᵀ s` over `‖s‖ ≤ r` via bisection on the
/// multiplier of the active constraint.
pub fn ball_constrained_quadratic_minimizer(a: &Matrix, c: &Vector, r: f64) -> Vector {
    let q = c.len();
    let solve = |lambda: f64| (a + Matrix::identity(q, q) * lambda).lu().solve(c).unwrap();
    let free = solve(0.0);
    if free.norm() <= r {
        return free;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while solve(hi).norm() > r {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if solve(mid).norm() > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    solve(0.5 * (lo + hi))
}

/// `ln(1 + e^{-x})^{-1}`, written out directly.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `E[f(Z)]`, `Z ~ N(mean, var)`, by a trapezoid rule on `mean ± 12 sd`.
pub fn trapezoid_gaussian<F: Fn(f64) -> f64>(mean: f64, var: f64, nodes: usize, f: F) -> f64 {
    let sd = var.sqrt();
    let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut acc = 0.0;
    for j in 0..nodes {
        let z = lo + h * j as f64;
        let w = if j == 0 || j == nodes - 1 { 0.5 } else { 1.0 };
        let dens = (-(z - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        acc += w * dens * f(z);
    }
    acc * h
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
