//! Brownian-motion test based on the maximal excursion from the start.
//!
//! The statistic `max_j |B(t_j) - B(t_0)| / (sigma_hat * sqrt(t_N - t_0))`
//! converges under the null to `sup_{s <= 1} |W(s)|`. The reference quantiles
//! come from Monte Carlo paths of a `dimension`-dimensional Wiener process.
//! The two-sided region `[0.834, 2.940]` at level 0.05 corresponds to the
//! planar case (`dimension = 2`), which is the default; `dimension = 1` gives
//! the exact reference for a scalar path.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Decision, TestReport};
use crate::error::{Error, Result};
use crate::rng;
use crate::series::TimeSeries;
use crate::stats::quantile_sorted;

/// `-zeta(1/2) / sqrt(2 pi)`: expected overshoot of a continuous maximum over
/// its discretely monitored value, in units of the step standard deviation.
const DISCRETE_MAX_CORRECTION: f64 = 0.582_597_157_939_010_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BmQuantileConfig {
    pub dimension: usize,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for BmQuantileConfig {
    fn default() -> Self {
        Self {
            dimension: 2,
            paths: 100_000,
            steps: 4096,
            seed: 0x00b1_2a7e,
        }
    }
}

/// Sorted Monte Carlo sample of `sup_{s <= 1} |W(s)|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmQuantileTable {
    pub config: BmQuantileConfig,
    sorted: Vec<f64>,
}

impl BmQuantileTable {
    pub fn generate(config: BmQuantileConfig) -> Result<Self> {
        if config.dimension == 0 || config.paths < 2 || config.steps < 1 {
            return Err(Error::InvalidParameter(format!("bad quantile table config {config:?}")));
        }
        let dt = 1.0 / config.steps as f64;
        let sd = dt.sqrt();
        let correction = DISCRETE_MAX_CORRECTION * sd;
        let mut sorted: Vec<f64> = (0..config.paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(config.seed, i);
                let mut pos = vec![0.0_f64; config.dimension];
                let mut max_sq = 0.0_f64;
                for _ in 0..config.steps {
                    let mut sq = 0.0;
                    for p in pos.iter_mut() {
                        let z: f64 = r.sample(StandardNormal);
                        *p += sd * z;
                        sq += *p * *p;
                    }
                    max_sq = max_sq.max(sq);
                }
                max_sq.sqrt() + correction
            })
            .collect();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { config, sorted })
    }

    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p)
    }

    pub fn sample(&self) -> &[f64] {
        &self.sorted
    }
}

fn table_cache() -> &'static Mutex<HashMap<BmQuantileConfig, Arc<BmQuantileTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<BmQuantileConfig, Arc<BmQuantileTable>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Generate once per configuration and cache for the process lifetime.
pub fn bm_quantile_table(config: &BmQuantileConfig) -> Result<Arc<BmQuantileTable>> {
    let mut cache = table_cache().lock().expect("quantile cache poisoned");
    if let Some(t) = cache.get(config) {
        return Ok(Arc::clone(t));
    }
    let t = Arc::new(BmQuantileTable::generate(*config)?);
    cache.insert(*config, Arc::clone(&t));
    Ok(t)
}

/// Quantile `q(alpha)` from the default (planar, 10^5 paths) table.
pub fn bm_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(bm_quantile_table(&BmQuantileConfig::default())?.quantile(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmStatistic {
    pub max_excursion: f64,
    pub sigma_hat: f64,
    pub span: f64,
    pub value: f64,
}

pub fn briane_statistic(b: &TimeSeries) -> Result<BmStatistic> {
    if b.len() < 10 {
        return Err(Error::InsufficientData {
            required: 10,
            available: b.len(),
        });
    }
    let t = b.times();
    let x = b.values();
    let n = b.len() - 1;
    let max_excursion = x[1..].iter().map(|v| (v - x[0]).abs()).fold(0.0, f64::max);
    let sum: f64 = (1..=n).map(|j| (x[j] - x[j - 1]).powi(2) / (t[j] - t[j - 1])).sum();
    let sigma_hat = (sum / n as f64).sqrt();
    if !(sigma_hat > 0.0) {
        return Err(Error::Degenerate("zero σ̂: the path has no increments".into()));
    }
    let span = t[n] - t[0];
    Ok(BmStatistic {
        max_excursion,
        sigma_hat,
        span,
        value: max_excursion / (sigma_hat * span.sqrt()),
    })
}

/// Accept iff the statistic lies in `[q(alpha/2), q(1 - alpha/2)]`.
pub fn briane_bm_test(b: &TimeSeries, alpha: f64, table: &BmQuantileTable) -> Result<TestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let stat = briane_statistic(b)?;
    let region = (table.quantile(alpha / 2.0), table.quantile(1.0 - alpha / 2.0));
    Ok(region_report(stat, region, alpha, table))
}

/// Test against an explicit acceptance region.
pub fn briane_bm_test_with_region(b: &TimeSeries, alpha: f64, region: (f64, f64)) -> Result<TestReport> {
    let stat = briane_statistic(b)?;
    let decision = if stat.value >= region.0 && stat.value <= region.1 {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(TestReport {
        test: "briane_bm".into(),
        statistic: stat.value,
        p_value: None,
        region: Some(region),
        decision,
        alpha,
        seed: None,
        metadata: Default::default(),
    }
    .meta("max_excursion", stat.max_excursion)
    .meta("sigma_hat", stat.sigma_hat)
    .meta("span", stat.span))
}

fn region_report(stat: BmStatistic, region: (f64, f64), alpha: f64, table: &BmQuantileTable) -> TestReport {
    let decision = if stat.value >= region.0 && stat.value <= region.1 {
        Decision::Accept
    } else {
        Decision::Reject
    };
    TestReport {
        test: "briane_bm".into(),
        statistic: stat.value,
        p_value: None,
        region: Some(region),
        decision,
        alpha,
        seed: Some(table.config.seed),
        metadata: Default::default(),
    }
    .meta("max_excursion", stat.max_excursion)
    .meta("sigma_hat", stat.sigma_hat)
    .meta("span", stat.span)
    .meta("reference_dimension", table.config.dimension)
    .meta("reference_paths", table.config.paths)
    .meta("reference_steps", table.config.steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{FbmGenerator, FbmParams};
    use crate::series::DEFAULT_EPOCH;

    /// `P(sup_{s<=1} |W(s)| < x)` for scalar W (alternating theta series).
    fn sup_abs_cdf(x: f64) -> f64 {
        let mut s = 0.0;
        for k in 0..200 {
            let a = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s += sign / a * (-(a * a) * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp();
        }
        4.0 / std::f64::consts::PI * s
    }

    fn sup_abs_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (0.05, 6.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sup_abs_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_table_matches_series_oracle() {
        let t = BmQuantileTable::generate(BmQuantileConfig {
            dimension: 1,
            paths: 40_000,
            steps: 1024,
            seed: 5,
        })
        .unwrap();
        for p in [0.025, 0.5, 0.975] {
            let want = sup_abs_quantile(p);
            let got = t.quantile(p);
            assert!((got - want).abs() < 0.02, "p = {p}: {got} vs {want}");
        }
    }

    #[test]
    fn quantiles_are_monotone() {
        let t = BmQuantileTable::generate(BmQuantileConfig {
            paths: 4000,
            steps: 256,
            ..Default::default()
        })
        .unwrap();
        assert!(t.quantile(0.1) < t.quantile(0.9));
    }

    #[test]
    fn hand_computed_statistic() {
        let s = TimeSeries::from_values((0..10).map(f64::from).collect()).unwrap();
        let st = briane_statistic(&s).unwrap();
        assert_eq!(st.sigma_hat, 1.0);
        assert_eq!(st.max_excursion, 9.0);
        assert_eq!(st.value, 3.0);

        // below the ten-point floor
        let ramp = TimeSeries::from_values(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(briane_statistic(&ramp).is_err());
    }

    #[test]
    fn planar_region_decisions() {
        let mut x: Vec<f64> = vec![0.0; 12];
        for (i, v) in x.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.0 } else { 1.0 };
        }
        // zig-zag: sigma 1, excursion 1, span 11 -> 1/sqrt(11) ~ 0.30 -> reject
        let s = TimeSeries::from_values(x).unwrap();
        let r = briane_bm_test_with_region(&s, 0.05, (0.834, 2.940)).unwrap();
        assert_eq!(r.decision, Decision::Reject);
        assert!((r.statistic - 1.0 / 11f64.sqrt()).abs() < 1e-12);

        let ramp = TimeSeries::from_values((0..5).map(f64::from).chain((5..10).map(|_| 4.0)).collect()).unwrap();
        // excursion 4, sigma sqrt(4/9), span 9 -> 4 / (2/3 * 3) = 2 -> accept
        let r = briane_bm_test_with_region(&ramp, 0.05, (0.834, 2.940)).unwrap();
        assert!((r.statistic - 2.0).abs() < 1e-12);
        assert_eq!(r.decision, Decision::Accept);
    }

    #[test]
    fn uneven_spacing_uses_time_steps() {
        let s = TimeSeries::new(
            (0..10).map(|i| 2.0 * i as f64).collect(),
            (0..10).map(f64::from).collect(),
            DEFAULT_EPOCH,
        )
        .unwrap();
        let st = briane_statistic(&s).unwrap();
        assert!((st.sigma_hat - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((st.value - 9.0 / (0.5f64.sqrt() * 18f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn constant_path_is_degenerate() {
        let s = TimeSeries::from_values(vec![1.0; 20]).unwrap();
        let e = briane_statistic(&s).unwrap_err();
        assert!(e.to_string().contains("zero σ̂"));
    }

    #[test]
    fn statistic_is_scale_invariant() {
        let gen = FbmGenerator::new(FbmParams::wiener(), 300).unwrap();
        let x = gen.sample(&mut rng::stream(1, 0));
        let a = briane_statistic(&TimeSeries::from_values(x.clone()).unwrap()).unwrap();
        for k in [0.001, 3.0, 1e4] {
            let b = briane_statistic(&TimeSeries::from_values(x.iter().map(|v| v * k).collect()).unwrap()).unwrap();
            assert!((a.value - b.value).abs() < 1e-12 * a.value);
        }
    }

    #[test]
    fn invalid_alpha() {
        assert!(bm_quantile(0.0).is_err());
        assert!(bm_quantile(1.0).is_err());
    }
}
