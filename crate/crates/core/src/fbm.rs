//! Fractional Brownian motion with covariance `D (t^2H + s^2H - |t-s|^2H)`.
//!
//! Under this convention a unit increment has variance `2D`, so Brownian
//! motion is `H = 1/2, D = 1/2`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::series::TimeSeries;
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmParams {
    pub hurst: f64,
    pub diffusion: f64,
}

impl FbmParams {
    pub fn new(hurst: f64, diffusion: f64) -> Result<Self> {
        let p = Self { hurst, diffusion };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Hurst exponent must lie in (0, 1), got {}",
                self.hurst
            )));
        }
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "diffusion constant must be positive, got {}",
                self.diffusion
            )));
        }
        Ok(())
    }

    /// Wiener process under the `D (t^2H + ...)` convention.
    pub fn wiener() -> Self {
        Self {
            hurst: 0.5,
            diffusion: 0.5,
        }
    }
}

pub fn fbm_cov(p: &FbmParams, t: f64, s: f64) -> f64 {
    let h2 = 2.0 * p.hurst;
    p.diffusion * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2))
}

/// Autocovariance of unit increments (fractional Gaussian noise) at `lag`.
pub fn fgn_autocov(p: &FbmParams, lag: usize) -> f64 {
    let h2 = 2.0 * p.hurst;
    let k = lag as f64;
    p.diffusion * ((k + 1.0).powf(h2) + (k - 1.0).abs().powf(h2) - 2.0 * k.powf(h2))
}

/// Decay exponent of the increment autocorrelation, `2H - 2`.
pub fn autocorr_tail_exponent(p: &FbmParams) -> f64 {
    2.0 * p.hurst - 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMethod {
    CirculantEmbedding,
    Cholesky,
}

enum Sampler {
    Circulant { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky { lower: DMatrix<f64> },
}

/// Exact sampler for fBm on the grid `0, 1, ..., n-1`. Precomputes the
/// embedding spectrum (or Cholesky factor) once; sampling is then cheap.
pub struct FbmGenerator {
    params: FbmParams,
    n: usize,
    sampler: Sampler,
}

impl std::fmt::Debug for FbmGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmGenerator")
            .field("params", &self.params)
            .field("n", &self.n)
            .field("method", &self.method())
            .finish()
    }
}

impl FbmGenerator {
    /// Circulant embedding of the increment covariance, or a dense Cholesky
    /// factor when the embedding is not nonnegative definite.
    pub fn new(params: FbmParams, n: usize) -> Result<Self> {
        match Self::with_method(params, n, SimulationMethod::CirculantEmbedding) {
            Err(Error::Numerical(_)) => Self::with_method(params, n, SimulationMethod::Cholesky),
            other => other,
        }
    }

    pub fn with_method(params: FbmParams, n: usize, method: SimulationMethod) -> Result<Self> {
        params.validate()?;
        if n < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                available: n,
            });
        }
        let sampler = match method {
            SimulationMethod::CirculantEmbedding => circulant(&params, n - 1)?,
            SimulationMethod::Cholesky => cholesky(&params, n)?,
        };
        Ok(Self { params, n, sampler })
    }

    pub fn params(&self) -> FbmParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn method(&self) -> SimulationMethod {
        match self.sampler {
            Sampler::Circulant { .. } => SimulationMethod::CirculantEmbedding,
            Sampler::Cholesky { .. } => SimulationMethod::Cholesky,
        }
    }

    /// Fill `out` (length `n`) with one path; `out[0] == 0`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(out.len(), self.n);
        out[0] = 0.0;
        match &self.sampler {
            Sampler::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                let mut acc = 0.0;
                for (o, z) in out[1..].iter_mut().zip(&buf) {
                    acc += z.re;
                    *o = acc;
                }
            }
            Sampler::Cholesky { lower } => {
                let k = self.n - 1;
                let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..k {
                    let mut v = 0.0;
                    for j in 0..=i {
                        v += lower[(i, j)] * z[j];
                    }
                    out[i + 1] = v;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.sample_into(rng, &mut out);
        out
    }
}

fn circulant(p: &FbmParams, k: usize) -> Result<Sampler> {
    // first row of the 2k circulant: g(0..=k), g(k-1..=1)
    let m = 2 * k;
    let mut row: Vec<Complex64> = (0..=k).map(|j| Complex64::new(fgn_autocov(p, j), 0.0)).collect();
    row.extend((1..k).rev().map(|j| Complex64::new(fgn_autocov(p, j), 0.0)));
    debug_assert_eq!(row.len(), m);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);

    let max = row.iter().map(|z| z.re).fold(0.0_f64, f64::max);
    let tol = 1e-10 * max.max(f64::MIN_POSITIVE);
    if let Some(bad) = row.iter().map(|z| z.re).find(|&l| l < -tol) {
        return Err(Error::Numerical(format!(
            "circulant embedding has negative eigenvalue {bad:e}"
        )));
    }
    let sqrt_eig = row.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
    Ok(Sampler::Circulant { sqrt_eig, fft })
}

fn cholesky(p: &FbmParams, n: usize) -> Result<Sampler> {
    let k = n - 1;
    let cov = DMatrix::from_fn(k, k, |i, j| fbm_cov(p, (i + 1) as f64, (j + 1) as f64));
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("fBm covariance is not positive definite".into()))?;
    Ok(Sampler::Cholesky { lower: chol.l() })
}

/// A simulated path on `0, 1, ..., n-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmPath {
    pub params: FbmParams,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl FbmPath {
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| i as f64).collect()
    }

    pub fn to_series(&self) -> Result<TimeSeries> {
        TimeSeries::from_values(self.values.clone())
    }
}

/// One exact fBm path of length `n`, reproducible from `seed`.
pub fn simulate_fbm(p: FbmParams, n: usize, seed: u64) -> Result<FbmPath> {
    let gen = FbmGenerator::new(p, n)?;
    let mut r = rng::stream(seed, 0);
    Ok(FbmPath {
        params: p,
        values: gen.sample(&mut r),
        seed,
    })
}

pub fn increment_values(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Unit-lag increments of a path (fractional Gaussian noise for fBm).
pub fn increments(path: &FbmPath) -> Result<TimeSeries> {
    TimeSeries::from_values(increment_values(&path.values))
}

/// How the increment variance maps to `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionConvention {
    /// `D = Var(increment) / 2`, consistent with the covariance above.
    #[default]
    HalfIncrementVariance,
    /// `D = Var(increment)`.
    IncrementVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub value: f64,
    pub increment_variance: f64,
    pub convention: DiffusionConvention,
    /// Zero increment variance: the estimate violates `D > 0`.
    pub degenerate: bool,
}

pub fn estimate_diffusion(s: &TimeSeries) -> Result<DiffusionEstimate> {
    estimate_diffusion_with(s, DiffusionConvention::default())
}

pub fn estimate_diffusion_with(s: &TimeSeries, convention: DiffusionConvention) -> Result<DiffusionEstimate> {
    if s.len() < 3 {
        return Err(Error::InsufficientData {
            required: 3,
            available: s.len(),
        });
    }
    if !s.times().windows(2).all(|w| w[1] - w[0] == 1.0) {
        return Err(Error::NotDaily("increments need unit spacing".into()));
    }
    let inc = increment_values(s.values());
    let var = sample_variance(&inc);
    let value = match convention {
        DiffusionConvention::HalfIncrementVariance => var / 2.0,
        DiffusionConvention::IncrementVariance => var,
    };
    Ok(DiffusionEstimate {
        value,
        increment_variance: var,
        convention,
        degenerate: !(var > 0.0),
    })
}

/// Sample lag-1 autocorrelation.
pub fn lag1_autocorr(x: &[f64]) -> f64 {
    let m = mean(x);
    let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    num / den
}

/// Write `index,value`.
pub fn write_path_csv<W: Write>(mut out: W, path: &FbmPath) -> Result<()> {
    let io = |e| Error::io("<csv>", e);
    writeln!(out, "index,value").map_err(io)?;
    for (i, v) in path.values.iter().enumerate() {
        writeln!(out, "{i},{v}").map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn covariance_values() {
        let w = FbmParams::wiener();
        assert!((fbm_cov(&w, 2.0, 3.0) - 2.0).abs() < 1e-12);
        let p = FbmParams::new(0.427, 0.0846).unwrap();
        assert!((fbm_cov(&p, 5.0, 5.0) - 2.0 * 0.0846 * 5f64.powf(0.854)).abs() < 1e-12);
        // D (1 + 1 - 0) = 0.1692
        assert!((fbm_cov(&p, 1.0, 1.0) - 0.1692).abs() < 1e-12);
        assert_eq!(fbm_cov(&p, 3.0, 7.0), fbm_cov(&p, 7.0, 3.0));
    }

    #[test]
    fn tail_exponent() {
        let e = |h| autocorr_tail_exponent(&FbmParams::new(h, 1.0).unwrap());
        assert_eq!(e(0.5), -1.0);
        assert_eq!(e(0.75), -0.5);
        assert!((e(0.427) + 1.146).abs() < 1e-12);
    }

    #[test]
    fn invalid_params() {
        assert!(FbmParams::new(0.0, 1.0).is_err());
        assert!(FbmParams::new(1.0, 1.0).is_err());
        assert!(FbmParams::new(0.5, 0.0).is_err());
        assert!(simulate_fbm(FbmParams::wiener(), 1, 0).is_err());
    }

    #[test]
    fn covariance_is_psd_on_grids() {
        for &h in &[0.1, 0.427, 0.5, 0.9] {
            let p = FbmParams::new(h, 1.0).unwrap();
            let n = 256;
            let c = DMatrix::from_fn(n, n, |i, j| fbm_cov(&p, (i + 1) as f64, (j + 1) as f64));
            let trace = c.trace();
            let eig = SymmetricEigen::new(c).eigenvalues;
            assert!(eig.iter().all(|&l| l > -1e-8 * trace), "H = {h}");
        }
    }

    #[test]
    fn paths_start_at_zero_and_are_seeded() {
        let p = FbmParams::new(0.3, 2.0).unwrap();
        let a = simulate_fbm(p, 100, 9).unwrap();
        let b = simulate_fbm(p, 100, 9).unwrap();
        let c = simulate_fbm(p, 100, 10).unwrap();
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        assert_eq!(simulate_fbm(p, 2, 1).unwrap().values.len(), 2);
    }

    #[test]
    fn wiener_increments_are_standard_normal() {
        let path = simulate_fbm(FbmParams::wiener(), 200_001, 4).unwrap();
        let inc = increment_values(&path.values);
        let v = sample_variance(&inc);
        assert!((v - 1.0).abs() < 0.01, "variance {v}");
        assert!(lag1_autocorr(&inc).abs() < 0.01);
    }

    #[test]
    fn increments_of_small_paths() {
        let path = FbmPath {
            params: FbmParams::wiener(),
            values: vec![0.0, 1.0, 0.0, 1.0],
            seed: 0,
        };
        assert_eq!(increments(&path).unwrap().values(), &[1.0, -1.0, 1.0]);
        let flat = FbmPath {
            values: vec![0.0; 5],
            ..path
        };
        assert!(increments(&flat).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn persistent_increments_correlate_positively() {
        let p = FbmParams::new(0.7, 1.0).unwrap();
        let gen = FbmGenerator::new(p, 500).unwrap();
        let mut sum = 0.0;
        for r in 0..200 {
            let x = gen.sample(&mut rng::stream(11, r));
            sum += lag1_autocorr(&increment_values(&x));
        }
        let avg = sum / 200.0;
        let theory = (2f64.powf(1.4) - 2.0) / 2.0;
        assert!(avg > 0.0);
        assert!((avg - theory).abs() < 0.05, "avg {avg} vs {theory}");
    }

    #[test]
    fn diffusion_estimates() {
        let s = TimeSeries::from_values(vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let d = estimate_diffusion(&s).unwrap();
        assert!((d.increment_variance - 4.0 / 3.0).abs() < 1e-12);
        assert!((d.value - 2.0 / 3.0).abs() < 1e-12);
        let d2 = estimate_diffusion_with(&s, DiffusionConvention::IncrementVariance).unwrap();
        assert!((d2.value - 4.0 / 3.0).abs() < 1e-12);

        let c = TimeSeries::from_values(vec![5.0; 10]).unwrap();
        let d = estimate_diffusion(&c).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.degenerate);

        let irregular =
            TimeSeries::new(vec![0.0, 1.0, 3.0], vec![0.0, 1.0, 2.0], crate::series::DEFAULT_EPOCH).unwrap();
        assert!(estimate_diffusion(&irregular).is_err());
    }

    #[test]
    fn cholesky_and_circulant_agree_in_distribution() {
        let p = FbmParams::new(0.8, 0.3).unwrap();
        let n = 12;
        let reps = 40_000;
        for method in [SimulationMethod::CirculantEmbedding, SimulationMethod::Cholesky] {
            let gen = FbmGenerator::with_method(p, n, method).unwrap();
            assert_eq!(gen.method(), method);
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            for r in 0..reps {
                let x = gen.sample(&mut rng::stream(21, r));
                let prod = x[5] * x[11];
                acc += prod;
                acc2 += prod * prod;
            }
            let m = acc / reps as f64;
            let se = ((acc2 / reps as f64 - m * m) / reps as f64).sqrt();
            let want = fbm_cov(&p, 5.0, 11.0);
            assert!((m - want).abs() < 4.0 * se, "{method:?}: {m} vs {want} (se {se})");
        }
    }

    #[test]
    fn path_csv() {
        let path = FbmPath {
            params: FbmParams::wiener(),
            values: vec![0.0, 0.5],
            seed: 0,
        };
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &path).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,value\n0,0\n1,0.5\n");
    }
}
