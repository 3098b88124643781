//! Pólya-Gamma draws and the two-block Gibbs sampler for a Gaussian prior
//! times a logistic factor.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::seed::{hash_words, rng_from_seed, StreamTag};

/// Default number of discarded Gibbs sweeps.
pub const DEFAULT_BURN_IN: usize = 100;

const TRUNC: f64 = 0.64;

/// `ln Φ(x)`.
fn log_norm_cdf(x: f64) -> f64 {
    if x < -35.0 {
        // Mills-ratio asymptotics; erfc underflows below this point.
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * PI).ln()
    } else {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    }
}

/// Coefficient `a_n(x)` of the alternating series for `J*(1, 0)`.
fn series_term(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// Probability of drawing from the exponential piece of the proposal.
fn exponential_mass(z: f64) -> f64 {
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let rt = (1.0 / TRUNC).sqrt();
    let b = rt * (TRUNC * z - 1.0);
    let a = -rt * (TRUNC * z + 1.0);
    let x0 = fz.ln() + fz * TRUNC;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    1.0 / (1.0 + 4.0 / PI * (xb.exp() + xa.exp()))
}

/// Inverse Gaussian with mean `1/z`, truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > TRUNC {
        loop {
            let (mut e1, mut e2): (f64, f64) = (rng.sample(Exp1), rng.sample(Exp1));
            while e1 * e1 > 2.0 * e2 / TRUNC {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
            }
            let y = 1.0 + e1 * TRUNC;
            let x = TRUNC / (y * y);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    }
    loop {
        let y: f64 = rng.sample(StandardNormal);
        let y2 = y * y;
        let mu_y = mu * y2;
        let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
        if rng.random::<f64>() > mu / (mu + x) {
            x = mu * mu / x;
        }
        if x < TRUNC {
            return x;
        }
    }
}

/// One draw from `PG(1, c)` using the exact alternating-series sampler.
pub fn sample_pg1_with<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = 0.5 * c.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = exponential_mass(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = rng.sample(Exp1);
            TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_term(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_term(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_term(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// One draw from `PG(1, c)` keyed by a seed.
pub fn sample_pg1(c: f64, seed: u64) -> f64 {
    sample_pg1_with(c, &mut rng_from_seed(seed))
}

/// `E[PG(1, c)] = tanh(c/2) / (2c)`, equal to 1/4 at `c = 0`.
pub fn pg1_mean(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-6 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Target `π(z) ∝ N(z; a, σ²) / (1 + exp(-c z))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsTarget {
    pub a: f64,
    pub c: f64,
    pub sigma2: f64,
}

impl GibbsTarget {
    pub fn new(a: f64, c: f64, sigma2: f64) -> Result<Self> {
        if !(a.is_finite() && c.is_finite() && sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid Gibbs target (a={a}, c={c}, sigma2={sigma2})"
            )));
        }
        Ok(GibbsTarget { a, c, sigma2 })
    }
}

/// Draws of a Gibbs chain after burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub z_samples: Vec<f64>,
    pub accepted_budget: usize,
    pub seed_used: u64,
    /// Hash of the uniforms driving the Gaussian block and of the per-sweep
    /// seeds of the Pólya-Gamma block.
    pub stream_fingerprint: u64,
}

/// Run `burn_in + m` sweeps of `ω | z ~ PG(1, c z)` then
/// `z | ω ~ N((a + cσ²/2)/(1 + ωσ²c²), σ²/(1 + ωσ²c²))`, starting at `z = a`.
///
/// Each sweep draws from its own seeds, so two chains with the same seed
/// consume the same random streams whatever their parameters.
pub fn gibbs_chain(target: &GibbsTarget, m: usize, burn_in: usize, seed: u64) -> Result<ChainOutput> {
    if m == 0 {
        return Err(Error::InvalidArgument("chain length must be positive".into()));
    }
    let GibbsTarget { a, c, sigma2 } = *target;
    let shift = a + 0.5 * c * sigma2;
    let c2s = c * c * sigma2;
    let mut z = a;
    let mut out = Vec::with_capacity(m);
    let mut fingerprint = hash_words(&[seed, StreamTag::ChainStep as u64]);
    for r in 0..(burn_in + m) {
        let pg_seed = hash_words(&[seed, StreamTag::ChainStep as u64, r as u64, 0]);
        let n_seed = hash_words(&[seed, StreamTag::ChainStep as u64, r as u64, 1]);
        let omega = sample_pg1_with(c * z, &mut rng_from_seed(pg_seed));
        let mut nrng = rng_from_seed(n_seed);
        let u1: f64 = nrng.random();
        let u2: f64 = nrng.random();
        fingerprint = hash_words(&[fingerprint, pg_seed, u1.to_bits(), u2.to_bits()]);
        let e = (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * PI * u2).cos();
        let denom = 1.0 + omega * c2s;
        z = shift / denom + (sigma2 / denom).sqrt() * e;
        if r >= burn_in {
            out.push(z);
        }
    }
    Ok(ChainOutput {
        z_samples: out,
        accepted_budget: m,
        seed_used: seed,
        stream_fingerprint: fingerprint,
    })
}

/// `(1 + exp(c z))^{-1}` without overflow.
pub fn logistic_weight(c: f64, z: f64) -> f64 {
    let u = c * z;
    if u > 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

/// Sample mean of `(1 + exp(c z))^{-1}` along a chain.
pub fn mean_logistic_weight(c: f64, samples: &[f64]) -> f64 {
    samples.iter().map(|&z| logistic_weight(c, z)).sum::<f64>() / samples.len() as f64
}
