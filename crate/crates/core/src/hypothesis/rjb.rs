//! Robust Jarque-Bera test.
//!
//! Spread is measured by `J_M = sqrt(pi/2) / M * sum |z_j - median|`, and
//!
//! ```text
//! JB_M = (M / C1) (mu3 / J_M^3)^2 + (M / C2) (mu4 / J_M^4 - 3)^2
//! ```
//!
//! with `mu3`, `mu4` the central sample moments. `C1` and `C2` are the null
//! variances of the two scaled components, estimated per sample size by Monte
//! Carlo (or the classical 6 and 64). The p-value is the fraction of `k`
//! simulated null statistics that exceed the observed one.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Decision, TestReport};
use crate::error::{Error, Result};
use crate::rng;

pub const RJB_MIN_SAMPLE: usize = 8;
pub const RJB_MIN_ITERATIONS: usize = 1000;
const CALIBRATION_REPLICATES: usize = 20_000;
const CALIBRATION_SEED: u64 = 0x0c1c_2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RjbConstants {
    #[default]
    MonteCarlo,
    Literature,
}

impl RjbConstants {
    pub fn name(&self) -> &'static str {
        match self {
            RjbConstants::MonteCarlo => "monte_carlo",
            RjbConstants::Literature => "literature",
        }
    }
}

/// Scaled skewness and excess kurtosis of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RjbComponents {
    pub j_m: f64,
    pub skew: f64,
    pub excess_kurtosis: f64,
}

pub fn j_m(z: &[f64]) -> f64 {
    let med = crate::stats::median(z);
    (std::f64::consts::PI / 2.0).sqrt() / z.len() as f64 * z.iter().map(|v| (v - med).abs()).sum::<f64>()
}

pub fn rjb_components(z: &[f64]) -> Result<RjbComponents> {
    let n = z.len() as f64;
    let j = j_m(z);
    if !(j > 0.0) {
        return Err(Error::Degenerate("J_M = 0: every value equals the median".into()));
    }
    let mean = z.iter().sum::<f64>() / n;
    let (mut m3, mut m4) = (0.0, 0.0);
    for v in z {
        let d = v - mean;
        let d2 = d * d;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m3 /= n;
    m4 /= n;
    Ok(RjbComponents {
        j_m: j,
        skew: m3 / j.powi(3),
        excess_kurtosis: m4 / j.powi(4) - 3.0,
    })
}

fn statistic(c: &RjbComponents, m: usize, c1: f64, c2: f64) -> f64 {
    let m = m as f64;
    m / c1 * c.skew * c.skew + m / c2 * c.excess_kurtosis * c.excess_kurtosis
}

fn normal_components(m: usize, seed: u64, reps: usize) -> Vec<RjbComponents> {
    (0..reps as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; m],
            |buf, i| {
                let mut r = rng::stream(seed, i);
                for v in buf.iter_mut() {
                    *v = r.sample(StandardNormal);
                }
                // a continuous sample never has J_M = 0
                rjb_components(buf).expect("normal sample")
            },
        )
        .collect()
}

fn constants_cache() -> &'static Mutex<HashMap<usize, (f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, (f64, f64)>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `(C1, C2)` for sample size `m`.
pub fn rjb_constants(m: usize, mode: RjbConstants) -> (f64, f64) {
    if mode == RjbConstants::Literature {
        return (6.0, 64.0);
    }
    if let Some(c) = constants_cache().lock().expect("rjb cache poisoned").get(&m) {
        return *c;
    }
    let comps = normal_components(m, CALIBRATION_SEED ^ m as u64, CALIBRATION_REPLICATES);
    let k = comps.len() as f64;
    let c1 = m as f64 * comps.iter().map(|c| c.skew * c.skew).sum::<f64>() / k;
    let c2 = m as f64 * comps.iter().map(|c| c.excess_kurtosis * c.excess_kurtosis).sum::<f64>() / k;
    constants_cache()
        .lock()
        .expect("rjb cache poisoned")
        .insert(m, (c1, c2));
    (c1, c2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct NullKey {
    m: usize,
    k: usize,
    seed: u64,
    mode: RjbConstants,
}

/// Sorted null sample of `JB_M` for one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct RjbNull {
    pub m: usize,
    pub seed: u64,
    pub constants: RjbConstants,
    pub c1: f64,
    pub c2: f64,
    sorted: Vec<f64>,
}

impl RjbNull {
    pub fn generate(m: usize, k: usize, seed: u64, constants: RjbConstants) -> Result<Self> {
        if m < RJB_MIN_SAMPLE {
            return Err(Error::InsufficientData {
                required: RJB_MIN_SAMPLE,
                available: m,
            });
        }
        if k < RJB_MIN_ITERATIONS {
            return Err(Error::InvalidParameter(format!(
                "need at least {RJB_MIN_ITERATIONS} Monte Carlo iterations, got {k}"
            )));
        }
        let (c1, c2) = rjb_constants(m, constants);
        let mut sorted: Vec<f64> = normal_components(m, seed, k)
            .iter()
            .map(|c| statistic(c, m, c1, c2))
            .collect();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            m,
            seed,
            constants,
            c1,
            c2,
            sorted,
        })
    }

    /// Cached by `(m, k, seed, constants)`.
    pub fn cached(m: usize, k: usize, seed: u64, constants: RjbConstants) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<NullKey, Arc<RjbNull>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = NullKey {
            m,
            k,
            seed,
            mode: constants,
        };
        if let Some(n) = cache.lock().expect("rjb cache poisoned").get(&key) {
            return Ok(Arc::clone(n));
        }
        let n = Arc::new(Self::generate(m, k, seed, constants)?);
        cache.lock().expect("rjb cache poisoned").insert(key, Arc::clone(&n));
        Ok(n)
    }

    pub fn iterations(&self) -> usize {
        self.sorted.len()
    }

    pub fn sample(&self) -> &[f64] {
        &self.sorted
    }

    pub fn statistic(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.m {
            return Err(Error::InvalidParameter(format!(
                "null built for M = {}, sample has {}",
                self.m,
                z.len()
            )));
        }
        Ok(statistic(&rjb_components(z)?, self.m, self.c1, self.c2))
    }

    /// Fraction of null statistics strictly above `stat`.
    pub fn p_value(&self, stat: f64) -> f64 {
        let below_or_eq = self.sorted.partition_point(|&v| v <= stat);
        (self.sorted.len() - below_or_eq) as f64 / self.sorted.len() as f64
    }

    /// Statistic, p-value and decision (`reject` iff `p <= alpha`).
    pub fn test(&self, z: &[f64], alpha: f64) -> Result<TestReport> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        let stat = self.statistic(z)?;
        let p = self.p_value(stat);
        Ok(TestReport {
            test: "robust_jarque_bera".into(),
            statistic: stat,
            p_value: Some(p),
            region: None,
            decision: if p <= alpha { Decision::Reject } else { Decision::Accept },
            alpha,
            seed: Some(self.seed),
            metadata: Default::default(),
        }
        .meta("m", self.m)
        .meta("iterations", self.iterations())
        .meta("c1", self.c1)
        .meta("c2", self.c2)
        .meta("constants", self.constants.name()))
    }
}

/// RJB test of `z` against `k` null simulations drawn from `seed`.
pub fn robust_jarque_bera(z: &[f64], k: usize, seed: u64, alpha: f64) -> Result<TestReport> {
    RjbNull::cached(z.len(), k, seed, RjbConstants::MonteCarlo)?.test(z, alpha)
}
