//! Vector functionals and evaluation metrics.
//!
//! Top-k selection everywhere in the crate ranks by magnitude, descending,
//! with the lowest index winning ties.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::stream::RateVector;

/// Best k-term approximation of a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KTermDecomposition {
    /// `u` with every coordinate outside `support` zeroed.
    pub top: Vec<f64>,
    /// `sigma_k(u) = ||u - top||_1`.
    pub residual_l1: f64,
    /// Sorted positions of the `k` largest magnitudes.
    pub support: Vec<usize>,
}

#[inline]
fn rank_cmp(u: &[f64], a: usize, b: usize) -> Ordering {
    u[b].abs()
        .partial_cmp(&u[a].abs())
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Indices of the `k` largest magnitudes, in rank order.
pub fn top_k_indices(u: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(u.len());
    let mut idx: Vec<usize> = (0..u.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_cmp(u, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_cmp(u, a, b));
    idx
}

pub fn best_k_term(u: &[f64], k: usize) -> Result<KTermDecomposition> {
    if k > u.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds vector length {}",
            u.len()
        )));
    }
    let mut support = top_k_indices(u, k);
    support.sort_unstable();
    let mut top = vec![0.0; u.len()];
    for &i in &support {
        top[i] = u[i];
    }
    let residual_l1 = u
        .iter()
        .zip(&top)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(KTermDecomposition {
        top,
        residual_l1,
        support,
    })
}

/// `sigma_k(u)` for every `k` in `0..=len`, computed from sorted magnitudes.
/// Entry 0 is `||u||_1` and entry `len` is 0.
pub fn tail_masses(u: &[f64]) -> Vec<f64> {
    let mut mags: Vec<f64> = u.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut tails = vec![0.0; mags.len() + 1];
    // accumulate from the smallest entries upward
    for k in (0..mags.len()).rev() {
        tails[k] = tails[k + 1] + mags[k];
    }
    tails
}

pub fn positive_clip(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&v| v.max(0.0)).collect()
}

pub fn l1_norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v.abs()).sum()
}

pub fn l0_norm(u: &[f64]) -> usize {
    u.iter().filter(|&&v| v != 0.0).count()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// True iff the top-k support of `est` equals the whale support of `truth`.
pub fn support_recovery_success(est: &[f64], truth: &RateVector) -> bool {
    if est.len() != truth.len() {
        return false;
    }
    let mut s = top_k_indices(est, truth.k());
    s.sort_unstable();
    s == truth.whale_support()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError {
    pub value: f64,
    /// Set when `sigma_k(truth) = 0` and `value` is the plain l1 error.
    pub absolute: bool,
}

/// `||truth - est||_1 / sigma_k(truth)`.
pub fn relative_l1_error(est: &[f64], truth: &RateVector) -> RelativeError {
    let err = l1_distance(est, truth.rates());
    let sigma = l1_distance(truth.rates(), &truth.whales_only());
    if sigma > 0.0 {
        RelativeError {
            value: err / sigma,
            absolute: false,
        }
    } else {
        RelativeError {
            value: err,
            absolute: true,
        }
    }
}

/// Mean l1 risk with a 95% normal-approximation band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub sd: f64,
    pub half_width: f64,
    pub trials: usize,
}

pub fn mean_with_band(values: &[f64]) -> Result<RiskEstimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 trials, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    Ok(RiskEstimate {
        mean,
        sd,
        half_width: 1.96 * sd / (n as f64).sqrt(),
        trials: n,
    })
}

/// Empirical l1 risk over `(estimate, truth)` pairs.
pub fn empirical_risk<'a, I>(runs: I) -> Result<RiskEstimate>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let errors: Vec<f64> = runs.into_iter().map(|(e, t)| l1_distance(e, t)).collect();
    mean_with_band(&errors)
}
