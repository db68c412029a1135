//! Detrending-moving-average (DMA) goodness-of-fit test for fBm.
//!
//! For a unit-spaced path `B_1..B_N` and window `m`,
//!
//! ```text
//! S^2(m) = 1/(N-m) * sum_{j=m}^{N} (B_j - MA_m(B)_j)^2,   MA_m(B)_j = (1/m) sum_{i<m} B_{j-i}
//! ```
//!
//! Under the fBm null `S^2` is a Gaussian quadratic form, distributed as
//! `1/(N-m) * sum_j lambda_j U_j` with `U_j ~ chi^2(1)` and `lambda_j` the
//! eigenvalues of a covariance matrix chosen by [`CovarianceMode`]. The
//! two-sided p-value is `2/L * min(#{null < S^2}, #{null > S^2})`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Decision, TestReport};
use crate::error::{Error, Result};
use crate::fbm::{fbm_cov, fgn_autocov, FbmParams};
use crate::rng;
use crate::series::TimeSeries;

pub const DMA_REJECT_LEVEL: f64 = 0.02;
pub const DMA_WARNING_LEVEL: f64 = 0.05;
pub const DMA_MIN_SAMPLES: usize = 100;
const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Covariance of the detrended vector `Y_j = B_j - MA_m(B)_j`.
    #[default]
    Detrended,
    /// `E[B(t_j) B(t_k)]` on `t = 1..N-m+1`, without the detrending map.
    PathCovariance,
}

impl CovarianceMode {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceMode::Detrended => "detrended",
            CovarianceMode::PathCovariance => "path_covariance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmaConfig {
    pub window: usize,
    #[serde(default = "default_samples")]
    pub chi_square_samples: usize,
    #[serde(default)]
    pub covariance_mode: CovarianceMode,
}

fn default_samples() -> usize {
    1000
}

impl DmaConfig {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            chi_square_samples: default_samples(),
            covariance_mode: CovarianceMode::default(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.window > 1 && self.window + 1 < n) {
            return Err(Error::InvalidParameter(format!(
                "window m = {} must satisfy 1 < m < {}",
                self.window,
                n.saturating_sub(1)
            )));
        }
        if self.chi_square_samples < DMA_MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "need at least {DMA_MIN_SAMPLES} chi-square samples, got {}",
                self.chi_square_samples
            )));
        }
        Ok(())
    }
}

/// Detrended values `Y_j` for `j = m..N` (1-based), length `N - m + 1`.
pub fn dma_residuals(x: &[f64], m: usize) -> Result<Vec<f64>> {
    if !(m > 1 && m < x.len()) {
        return Err(Error::InvalidParameter(format!(
            "window m = {m} must satisfy 1 < m < {}",
            x.len()
        )));
    }
    let mut sum: f64 = x[..m].iter().sum();
    let mut y = Vec::with_capacity(x.len() - m + 1);
    y.push(x[m - 1] - sum / m as f64);
    for j in m..x.len() {
        sum += x[j] - x[j - m];
        y.push(x[j] - sum / m as f64);
    }
    Ok(y)
}

pub fn dma_statistic_values(x: &[f64], m: usize) -> Result<f64> {
    let y = dma_residuals(x, m)?;
    Ok(y.iter().map(|v| v * v).sum::<f64>() / (x.len() - m) as f64)
}

pub fn dma_statistic(b: &TimeSeries, m: usize) -> Result<f64> {
    b.require_daily()?;
    dma_statistic_values(b.values(), m)
}

/// Weights of the increments: `Y_j = sum_{l=0}^{m-2} w_l (B_{j-l} - B_{j-l-1})`,
/// `w_l = (m - 1 - l) / m`.
fn increment_weights(m: usize) -> Vec<f64> {
    (0..m - 1).map(|l| (m - 1 - l) as f64 / m as f64).collect()
}

/// Autocovariance `Cov(Y_j, Y_{j+h})` of the detrended vector, `h = 0..len`.
fn detrended_autocov(p: &FbmParams, m: usize, len: usize) -> Vec<f64> {
    let w = increment_weights(m);
    let g = |k: i64| fgn_autocov(p, k.unsigned_abs() as usize);
    (0..len as i64)
        .map(|h| {
            let mut c = 0.0;
            for (l, wl) in w.iter().enumerate() {
                for (l2, wl2) in w.iter().enumerate() {
                    c += wl * wl2 * g(h + l as i64 - l2 as i64);
                }
            }
            c
        })
        .collect()
}

/// Null covariance matrix of size `(n - m + 1)^2`.
pub fn dma_covariance(p: &FbmParams, n: usize, m: usize, mode: CovarianceMode) -> Result<DMatrix<f64>> {
    p.validate()?;
    if !(m > 1 && m < n) {
        return Err(Error::InvalidParameter(format!(
            "window m = {m} must satisfy 1 < m < {n}"
        )));
    }
    let k = n - m + 1;
    Ok(match mode {
        CovarianceMode::Detrended => {
            let c = detrended_autocov(p, m, k);
            DMatrix::from_fn(k, k, |i, j| c[i.abs_diff(j)])
        }
        CovarianceMode::PathCovariance => DMatrix::from_fn(k, k, |i, j| fbm_cov(p, (i + 1) as f64, (j + 1) as f64)),
    })
}

/// Eigenvalues used by the null, plus the number of small negative ones
/// clipped to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaEigen {
    pub values: Vec<f64>,
    pub clipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct EigenKey {
    hurst_bits: u64,
    n: usize,
    m: usize,
    mode: CovarianceMode,
}

fn eigen_cache() -> &'static Mutex<HashMap<EigenKey, Arc<DmaEigen>>> {
    static CACHE: OnceLock<Mutex<HashMap<EigenKey, Arc<DmaEigen>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn unit_eigen(hurst: f64, n: usize, m: usize, mode: CovarianceMode) -> Result<Arc<DmaEigen>> {
    let key = EigenKey {
        hurst_bits: hurst.to_bits(),
        n,
        m,
        mode,
    };
    if let Some(e) = eigen_cache().lock().expect("eigen cache poisoned").get(&key) {
        return Ok(Arc::clone(e));
    }
    let unit = FbmParams::new(hurst, 1.0)?;
    let cov = dma_covariance(&unit, n, m, mode)?;
    let trace = cov.trace();
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let floor = -NEGATIVE_EIGEN_TOLERANCE * trace;
    let mut clipped = 0;
    let mut values = Vec::with_capacity(eig.len());
    for &l in eig.iter() {
        if l < floor {
            return Err(Error::Numerical(format!(
                "covariance eigenvalue {l:e} below -1e-8 * trace ({floor:e})"
            )));
        }
        if l < 0.0 {
            clipped += 1;
        }
        values.push(l.max(0.0));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    let e = Arc::new(DmaEigen { values, clipped });
    eigen_cache()
        .lock()
        .expect("eigen cache poisoned")
        .insert(key, Arc::clone(&e));
    Ok(e)
}

/// Eigenvalues of the null covariance for `params` (cached per `(H, n, m, mode)`
/// at unit diffusion and rescaled by `D`).
pub fn dma_eigenvalues(p: &FbmParams, n: usize, m: usize, mode: CovarianceMode) -> Result<DmaEigen> {
    p.validate()?;
    let e = unit_eigen(p.hurst, n, m, mode)?;
    Ok(DmaEigen {
        values: e.values.iter().map(|l| l * p.diffusion).collect(),
        clipped: e.clipped,
    })
}

fn sample_null(lambda: &[f64], norm: f64, l: usize, seed: u64) -> Vec<f64> {
    // eigenvalues are sorted descending; negligible tail terms are skipped
    let total: f64 = lambda.iter().sum();
    let cut = lambda.iter().position(|&v| v <= 1e-15 * total).unwrap_or(lambda.len());
    let lambda = &lambda[..cut];
    let mut out: Vec<f64> = (0..l as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let s: f64 = lambda
                .iter()
                .map(|&w| {
                    let z: f64 = r.sample(StandardNormal);
                    w * z * z
                })
                .sum();
            s / norm
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Sorted sample of `L` draws of `1/(N-m) * sum_j lambda_j U_j`.
pub fn dma_null_distribution(
    p: &FbmParams,
    n: usize,
    m: usize,
    l: usize,
    mode: CovarianceMode,
    seed: u64,
) -> Result<Vec<f64>> {
    if l < DMA_MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {DMA_MIN_SAMPLES} chi-square samples, got {l}"
        )));
    }
    let e = dma_eigenvalues(p, n, m, mode)?;
    Ok(sample_null(&e.values, (n - m) as f64, l, seed))
}

/// `2/L * min(below, above)`, capped at 1.
pub fn p_value_from_counts(below: usize, above: usize, l: usize) -> f64 {
    (2.0 * below.min(above) as f64 / l as f64).min(1.0)
}

pub fn dma_decision(p: f64, alpha: f64) -> Decision {
    if p <= alpha {
        Decision::Reject
    } else if p <= DMA_WARNING_LEVEL.max(alpha) {
        Decision::Warning
    } else {
        Decision::Accept
    }
}

/// DMA test of a unit-spaced path against fBm with `params`. Reject if
/// `p <= alpha`, warning if `p <= 0.05`, accept otherwise.
pub fn dma_test(b: &TimeSeries, params: &FbmParams, cfg: &DmaConfig, alpha: f64, seed: u64) -> Result<TestReport> {
    b.require_daily()?;
    dma_test_values(b.values(), params, cfg, alpha, seed)
}

pub(crate) fn dma_test_values(
    x: &[f64],
    params: &FbmParams,
    cfg: &DmaConfig,
    alpha: f64,
    seed: u64,
) -> Result<TestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let n = x.len();
    cfg.validate(n)?;
    let m = cfg.window;
    let stat = dma_statistic_values(x, m)?;
    let e = dma_eigenvalues(params, n, m, cfg.covariance_mode)?;
    let null = sample_null(&e.values, (n - m) as f64, cfg.chi_square_samples, seed);
    let below = null.partition_point(|&v| v < stat);
    let above = null.len() - null.partition_point(|&v| v <= stat);
    let p = p_value_from_counts(below, above, null.len());
    let mut report = TestReport {
        test: "dma".into(),
        statistic: stat,
        p_value: Some(p),
        region: None,
        decision: dma_decision(p, alpha),
        alpha,
        seed: Some(seed),
        metadata: Default::default(),
    }
    .meta("m", m)
    .meta("n", n)
    .meta("mode", cfg.covariance_mode.name())
    .meta("L", cfg.chi_square_samples)
    .meta("below", below)
    .meta("above", above);
    if e.clipped > 0 {
        report = report.meta(
            "warning",
            format!("{} small negative eigenvalues clipped to 0", e.clipped),
        );
    }
    Ok(report)
}
