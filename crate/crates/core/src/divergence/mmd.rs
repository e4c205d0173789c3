//! Gaussian-kernel maximum mean discrepancy.
//!
//! The bound consumes the linear-time statistic averaged over random
//! shuffles, maximized over a bandwidth grid. The quadratic biased estimator
//! is kept as a reference.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::UnlabeledSample;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// `exp(−‖x − y‖² / (2κ²))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], kappa: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {kappa}")));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(kernel(x, y, 1.0 / (2.0 * kappa * kappa)))
}

#[inline]
fn kernel(x: &[f64], y: &[f64], inv_two_k2: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq * inv_two_k2).exp()
}

fn check_pair(x: &UnlabeledSample, y: &UnlabeledSample, kappa: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {kappa}")));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyData("MMD sample"));
    }
    Ok(1.0 / (2.0 * kappa * kappa))
}

fn mean_gram(a: &UnlabeledSample, b: &UnlabeledSample, c: f64) -> f64 {
    let mut total = 0.0;
    for x in a.rows() {
        let mut row = 0.0;
        for y in b.rows() {
            row += kernel(x, y, c);
        }
        total += row;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// Biased (V-statistic) MMD, square-rooted after clamping at zero.
pub fn mmd_quadratic_biased(x: &UnlabeledSample, y: &UnlabeledSample, kappa: f64) -> Result<f64> {
    let c = check_pair(x, y, kappa)?;
    let sq = mean_gram(x, x, c) - 2.0 * mean_gram(x, y, c) + mean_gram(y, y, c);
    Ok(sq.max(0.0).sqrt())
}

/// Standard error of the unbiased quadratic MMD² from its first-order
/// U-statistic projection, `2·sd(h̄_i)/√n` over the paired rows
/// `z_i = (x_i, y_i)` of the common-length prefix.
pub fn mmd_u_statistic_std_error(x: &UnlabeledSample, y: &UnlabeledSample, kappa: f64) -> Result<f64> {
    let c = check_pair(x, y, kappa)?;
    let n = x.len().min(y.len());
    if n < 3 {
        return Err(Error::InvalidArgument("need at least 3 paired rows".into()));
    }
    let h = |i: usize, j: usize| {
        kernel(x.row(i), x.row(j), c) + kernel(y.row(i), y.row(j), c)
            - kernel(x.row(i), y.row(j), c)
            - kernel(x.row(j), y.row(i), c)
    };
    let hbar: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| h(i, j)).sum::<f64>() / (n - 1) as f64)
        .collect();
    let mean = hbar.iter().sum::<f64>() / n as f64;
    let var = hbar.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(2.0 * (var / n as f64).sqrt())
}

/// Linear-time statistic on the rows in the given order:
/// `(2/n) Σ_{i<n/2} h((x_{2i}, y_{2i}), (x_{2i+1}, y_{2i+1}))` with
/// `h = k(x,x′) + k(y,y′) − k(x,y′) − k(x′,y)`. Returns the statistic and the
/// standard error of its block mean.
fn linear_statistic(
    x: &UnlabeledSample,
    xi: &[usize],
    y: &UnlabeledSample,
    yi: &[usize],
    c: f64,
) -> (f64, f64) {
    let blocks = xi.len() / 2;
    let hs: Vec<f64> = (0..blocks)
        .map(|b| {
            let (x1, x2) = (x.row(xi[2 * b]), x.row(xi[2 * b + 1]));
            let (y1, y2) = (y.row(yi[2 * b]), y.row(yi[2 * b + 1]));
            kernel(x1, x2, c) + kernel(y1, y2, c) - kernel(x1, y2, c) - kernel(x2, y1, c)
        })
        .collect();
    let mean = hs.iter().sum::<f64>() / blocks as f64;
    let se = if blocks > 1 {
        let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (blocks - 1) as f64;
        (var / blocks as f64).sqrt()
    } else {
        0.0
    };
    (mean, se)
}

/// Output of [`mmd_linear_shuffled`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMmd {
    /// Mean of the per-shuffle statistics (an MMD² estimate, may be negative).
    pub mean: f64,
    pub per_shuffle: Vec<f64>,
    /// Average within-shuffle standard error of the block mean.
    pub block_std_error: f64,
}

impl LinearMmd {
    /// Monte-Carlo standard error of `mean` across shuffles.
    pub fn shuffle_std_error(&self) -> f64 {
        let n = self.per_shuffle.len() as f64;
        if self.per_shuffle.len() < 2 {
            return 0.0;
        }
        let var = self
            .per_shuffle
            .iter()
            .map(|v| (v - self.mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Linear MMD² statistic in the rows' current order, truncated to the largest
/// even length both samples share. No shuffling.
pub fn mmd_linear_in_order(x: &UnlabeledSample, y: &UnlabeledSample, kappa: f64) -> Result<f64> {
    let c = check_pair(x, y, kappa)?;
    let n = x.len().min(y.len()) / 2 * 2;
    if n < 2 {
        return Err(Error::InvalidArgument("linear MMD needs at least 2 rows per sample".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok(linear_statistic(x, &idx, y, &idx, c).0)
}

/// Linear MMD² averaged over `shuffles` random permutations of the samples.
/// Deterministic in `seed`.
pub fn mmd_linear_shuffled(
    x: &UnlabeledSample,
    y: &UnlabeledSample,
    kappa: f64,
    shuffles: usize,
    seed: u64,
) -> Result<LinearMmd> {
    let c = check_pair(x, y, kappa)?;
    if shuffles == 0 {
        return Err(Error::InvalidArgument("shuffles must be >= 1".into()));
    }
    let n = x.len().min(y.len()) / 2 * 2;
    if n < 2 {
        return Err(Error::InvalidArgument("linear MMD needs at least 2 rows per sample".into()));
    }
    // One permutation of the longer index range drives both samples, so
    // equal-length samples are permuted jointly and X = Y gives exactly 0.
    let mut rng = stream_rng(seed, Stream::MmdShuffle);
    let mut perm: Vec<usize> = (0..x.len().max(y.len())).collect();
    let mut xi = Vec::with_capacity(n);
    let mut yi = Vec::with_capacity(n);
    let mut per_shuffle = Vec::with_capacity(shuffles);
    let mut se_sum = 0.0;
    for _ in 0..shuffles {
        perm.shuffle(&mut rng);
        xi.clear();
        yi.clear();
        xi.extend(perm.iter().copied().filter(|&i| i < x.len()).take(n));
        yi.extend(perm.iter().copied().filter(|&i| i < y.len()).take(n));
        let (stat, se) = linear_statistic(x, &xi, y, &yi, c);
        per_shuffle.push(stat);
        se_sum += se;
    }
    Ok(LinearMmd {
        mean: per_shuffle.iter().sum::<f64>() / shuffles as f64,
        per_shuffle,
        block_std_error: se_sum / shuffles as f64,
    })
}

/// How to choose kernel bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidths {
    /// Explicit list of κ values.
    Fixed(Vec<f64>),
    /// Median pairwise distance of the pooled sample times each multiplier.
    MedianHeuristic(Vec<f64>),
}

impl Default for Bandwidths {
    fn default() -> Self {
        Bandwidths::MedianHeuristic(vec![0.25, 0.5, 1.0, 2.0, 4.0])
    }
}

/// MMD estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmdConfig {
    pub bandwidths: Bandwidths,
    pub shuffles: usize,
    pub seed: u64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidths: Bandwidths::default(),
            shuffles: 10,
            seed: 0,
        }
    }
}

const MEDIAN_POINTS: usize = 1000;

/// Median pairwise Euclidean distance over (a strided subsample of) the
/// pooled rows.
pub fn median_pairwise_distance(x: &UnlabeledSample, y: &UnlabeledSample) -> f64 {
    let pooled: Vec<&[f64]> = x.rows().chain(y.rows()).collect();
    let stride = pooled.len().div_ceil(MEDIAN_POINTS).max(1);
    let pts: Vec<&[f64]> = pooled.into_iter().step_by(stride).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len().saturating_sub(1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let sq: f64 = pts[i].iter().zip(pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(sq.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

impl MmdConfig {
    /// Concrete ascending bandwidth list for a sample pair.
    pub fn resolve_bandwidths(&self, x: &UnlabeledSample, y: &UnlabeledSample) -> Result<Vec<f64>> {
        let mut k = match &self.bandwidths {
            Bandwidths::Fixed(k) => k.clone(),
            Bandwidths::MedianHeuristic(mult) => {
                let med = median_pairwise_distance(x, y);
                mult.iter().map(|m| m * med).collect()
            }
        };
        if k.is_empty() {
            return Err(Error::InvalidConfig("bandwidth list is empty".into()));
        }
        if let Some(b) = k.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::InvalidConfig(format!("bandwidth {b} is not positive")));
        }
        k.sort_by(f64::total_cmp);
        Ok(k)
    }
}

/// Result of the bandwidth sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// `√max(0, max_κ statistic)`.
    pub value: f64,
    pub bandwidth: f64,
    /// `(κ, shuffle-averaged linear MMD²)` for every bandwidth.
    pub per_bandwidth: Vec<(f64, f64)>,
}

/// MMD value fed to the bound: maximum over bandwidths of the clamped,
/// shuffle-averaged linear statistic, square-rooted.
pub fn mmd_estimate(x: &UnlabeledSample, y: &UnlabeledSample, cfg: &MmdConfig) -> Result<MmdEstimate> {
    let kappas = cfg.resolve_bandwidths(x, y)?;
    let mut per_bandwidth = Vec::with_capacity(kappas.len());
    for &k in &kappas {
        let stat = mmd_linear_shuffled(x, y, k, cfg.shuffles, cfg.seed)?;
        per_bandwidth.push((k, stat.mean));
    }
    let (bandwidth, best) = per_bandwidth
        .iter()
        .copied()
        .fold((kappas[0], f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    Ok(MmdEstimate {
        value: best.max(0.0).sqrt(),
        bandwidth,
        per_bandwidth,
    })
}
