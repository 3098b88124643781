//! Mini-batch sampling and exhaustive batch-mean moments.

use rand::Rng;

use crate::error::{Error, Result};
use crate::metric::Vector;
use crate::seed::rng_from_seed;

/// Largest `n` accepted by [`batch_mean_properties`].
pub const ENUMERATION_LIMIT: usize = 12;

/// Draw `b` indices in `0..n`, uniformly, with or without replacement.
pub fn sample_batch(n: usize, b: usize, with_replacement: bool, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || b == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut rng = rng_from_seed(seed);
    if with_replacement {
        return Ok((0..b).map(|_| rng.random_range(0..n)).collect());
    }
    if b > n {
        return Err(Error::BatchTooLarge { b, n });
    }
    Ok(rand::seq::index::sample(&mut rng, n, b).into_vec())
}

/// Moments of the batch mean over all size-`b` subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean_of_batch_means: Vector,
    pub variance_of_batch_means: f64,
    pub variance_bound: f64,
}

/// Enumerate every size-`b` subset of `values` and compute the exact first two
/// moments of the batch mean under sampling without replacement.
pub fn batch_mean_properties(values: &[Vector], b: usize) -> Result<BatchMoments> {
    let n = values.len();
    if n == 0 || b == 0 {
        return Err(Error::EmptyBatch);
    }
    if n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    if b > n {
        return Err(Error::BatchTooLarge { b, n });
    }
    let q = values[0].len();
    if let Some(v) = values.iter().find(|v| v.len() != q) {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: v.len(),
        });
    }

    let full = values.iter().fold(Vector::zeros(q), |acc, v| acc + v) / n as f64;
    let bound =
        values.iter().map(|v| (v - &full).norm_squared()).sum::<f64>() / (b as f64 * n as f64);

    let mut means = Vec::new();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != b {
            continue;
        }
        let mut acc = Vector::zeros(q);
        for (i, v) in values.iter().enumerate() {
            if mask & (1 << i) != 0 {
                acc += v;
            }
        }
        means.push(acc / b as f64);
    }
    let count = means.len() as f64;
    let mean = means.iter().fold(Vector::zeros(q), |acc, m| acc + m) / count;
    let var = means.iter().map(|m| (m - &full).norm_squared()).sum::<f64>() / count;
    Ok(BatchMoments {
        mean_of_batch_means: mean,
        variance_of_batch_means: var,
        variance_bound: bound,
    })
}
