//! Welch periodogram and log-log spectral regression.
//!
//! A power law `S(f) = S(f0) f^-beta` is fitted by least squares on
//! `(ln f, ln S)`. The exponent separates the two stationary/nonstationary
//! cases: `beta = 2H - 1` for fractional Gaussian noise (`-1 < beta < 1`) and
//! `beta = 2H + 1` for fractional Brownian motion (`1 < beta < 3`).
//!
//! Frequencies are in cycles per day. Using angular frequency instead only
//! shifts `log_intercept`.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;
use crate::stats::fit_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
    #[default]
    Hamming,
}

impl Window {
    pub fn name(&self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
            Window::Hamming => "hamming",
        }
    }

    /// Symmetric window of length `n`.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        let denom = (n.max(2) - 1) as f64;
        (0..n)
            .map(|i| {
                let c = (2.0 * PI * i as f64 / denom).cos();
                match self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * c,
                    Window::Hamming => 0.54 - 0.46 * c,
                }
            })
            .collect()
    }
}

/// One-sided spectral density estimate on `(0, 1/2)` cycles per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window_name: String,
    pub segments: usize,
}

impl Periodogram {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<csv>", e);
        writeln!(out, "frequency,power").map_err(io)?;
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            writeln!(out, "{f},{p}").map_err(io)?;
        }
        Ok(())
    }
}

/// Largest power of two not above `n / 4`, but at least the largest power of
/// two not above `min(n, 256)`.
pub fn default_segment_length(n: usize) -> usize {
    let pow2_floor = |v: usize| {
        if v == 0 {
            0
        } else {
            1usize << (usize::BITS - 1 - v.leading_zeros())
        }
    };
    pow2_floor(n / 4).max(pow2_floor(n.min(256)))
}

/// Welch estimate: mean-removed, windowed segments, averaged squared DFT
/// magnitudes, scaled to a one-sided density (unit-variance white noise has
/// expected density 2 at every reported frequency). DC and Nyquist bins are
/// omitted.
pub fn welch_periodogram(s: &TimeSeries, segment_length: usize, overlap: f64, window: Window) -> Result<Periodogram> {
    s.require_daily()?;
    welch_values(s.values(), segment_length, overlap, window)
}

pub(crate) fn welch_values(x: &[f64], segment_length: usize, overlap: f64, window: Window) -> Result<Periodogram> {
    if segment_length < 8 {
        return Err(Error::InvalidParameter(format!(
            "segment length must be at least 8, got {segment_length}"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    if x.len() < segment_length {
        return Err(Error::InsufficientData {
            required: segment_length,
            available: x.len(),
        });
    }

    let l = segment_length;
    let step = (l - (overlap * l as f64).round() as usize).max(1);
    let w = window.coefficients(l);
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(l);
    let bins = l.div_ceil(2) - 1;

    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    let mut segments = 0;
    let mut start = 0;
    while start + l <= x.len() {
        let seg = &x[start..start + l];
        let m = seg.iter().sum::<f64>() / l as f64;
        for ((b, v), wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new((v - m) * wi, 0.0);
        }
        fft.process(&mut buf);
        for (a, z) in acc.iter_mut().zip(&buf[1..=bins]) {
            *a += z.norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let scale = 2.0 / (w_energy * segments as f64);
    Ok(Periodogram {
        frequencies: (1..=bins).map(|k| k as f64 / l as f64).collect(),
        power: acc.into_iter().map(|a| a * scale).collect(),
        segment_length: l,
        overlap_fraction: overlap,
        window_name: window.name().to_string(),
        segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "fGn")]
    Fgn,
    #[serde(rename = "fBm")]
    Fbm,
    #[serde(rename = "out_of_range")]
    OutOfRange,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Fgn => "fGn",
            Classification::Fbm => "fBm",
            Classification::OutOfRange => "out_of_range",
        })
    }
}

/// Open-interval rule: fGn on (-1, 1), fBm on (1, 3).
pub fn classify(beta: f64) -> (Classification, Option<f64>) {
    if beta > -1.0 && beta < 1.0 {
        (Classification::Fgn, Some((beta + 1.0) / 2.0))
    } else if beta > 1.0 && beta < 3.0 {
        (Classification::Fbm, Some((beta - 1.0) / 2.0))
    } else {
        (Classification::OutOfRange, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFit {
    pub beta: f64,
    /// `ln S` at 1 cycle/day.
    pub log_intercept: f64,
    pub r_squared: f64,
    pub classification: Classification,
    pub hurst: Option<f64>,
    pub band: (f64, f64),
    pub bins_used: usize,
    /// Bins in the band dropped because their power was zero.
    pub zero_power_excluded: usize,
}

/// Least squares of `ln S` on `ln f` over bins with `f_min <= f <= f_max`.
pub fn fit_loglog(p: &Periodogram, f_min: f64, f_max: f64) -> Result<SpectralFit> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut in_band = 0;
    let mut zeros = 0;
    for (&f, &s) in p.frequencies.iter().zip(&p.power) {
        if f < f_min || f > f_max {
            continue;
        }
        in_band += 1;
        if s > 0.0 {
            lx.push(f.ln());
            ly.push(s.ln());
        } else {
            zeros += 1;
        }
    }
    if in_band == 0 {
        return Err(Error::InvalidParameter(format!(
            "no frequency bins in [{f_min}, {f_max}]"
        )));
    }
    if lx.len() < 8 {
        return Err(Error::InsufficientData {
            required: 8,
            available: lx.len(),
        });
    }
    let line = fit_line(&lx, &ly).ok_or_else(|| Error::Degenerate("single frequency".into()))?;
    let beta = -line.slope;
    let (classification, hurst) = classify(beta);
    Ok(SpectralFit {
        beta,
        log_intercept: line.intercept,
        r_squared: line.r_squared,
        classification,
        hurst,
        band: (f_min, f_max),
        bins_used: lx.len(),
        zero_power_excluded: zeros,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// `None` picks [`default_segment_length`].
    pub segment_length: Option<usize>,
    pub overlap: f64,
    pub window: Window,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            segment_length: None,
            overlap: 0.5,
            window: Window::Hamming,
            f_min: 0.0,
            f_max: 0.1,
        }
    }
}

/// Welch periodogram followed by the log-log fit.
pub fn analyze_spectrum(s: &TimeSeries, cfg: &SpectralConfig) -> Result<(Periodogram, SpectralFit)> {
    let l = cfg.segment_length.unwrap_or_else(|| default_segment_length(s.len()));
    let p = welch_periodogram(s, l, cfg.overlap, cfg.window)?;
    let fit = fit_loglog(&p, cfg.f_min, cfg.f_max)?;
    Ok((p, fit))
}

pub fn estimate_hurst(s: &TimeSeries, cfg: &SpectralConfig) -> Result<SpectralFit> {
    analyze_spectrum(s, cfg).map(|(_, fit)| fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{increment_values, FbmGenerator, FbmParams};
    use crate::rng;
    use proptest::prelude::*;

    fn power_law(beta: f64, c: f64, bins: usize) -> Periodogram {
        let frequencies: Vec<f64> = (1..=bins).map(|k| k as f64 / (2 * bins + 2) as f64).collect();
        let power = frequencies.iter().map(|f| c * f.powf(-beta)).collect();
        Periodogram {
            frequencies,
            power,
            segment_length: 2 * bins + 2,
            overlap_fraction: 0.0,
            window_name: "rectangular".into(),
            segments: 1,
        }
    }

    #[test]
    fn segment_length_rule() {
        assert_eq!(default_segment_length(2348), 512);
        assert_eq!(default_segment_length(4096), 1024);
        assert_eq!(default_segment_length(600), 256);
        assert_eq!(default_segment_length(100), 64);
    }

    #[test]
    fn constant_series_has_no_power() {
        let s = TimeSeries::from_values(vec![21.5; 512]).unwrap();
        let p = welch_periodogram(&s, 128, 0.5, Window::Hamming).unwrap();
        assert!(p.power.iter().all(|&v| v < 1e-20 * 21.5 * 21.5));
    }

    #[test]
    fn sinusoid_peak_at_bin_center() {
        let l = 128;
        let k = 10;
        let x: Vec<f64> = (0..1024)
            .map(|t| (2.0 * PI * k as f64 * t as f64 / l as f64).sin())
            .collect();
        let p = welch_periodogram(&TimeSeries::from_values(x).unwrap(), l, 0.5, Window::Hamming).unwrap();
        let imax = (0..p.power.len())
            .max_by(|&a, &b| p.power[a].total_cmp(&p.power[b]))
            .unwrap();
        assert_eq!(p.frequencies[imax], k as f64 / l as f64);
        assert_eq!(p.segments, 15);
    }

    #[test]
    fn single_segment_matches_direct_dft() {
        // I(f) = |1/(2 pi N) sum x_j e^{i f j}|^2 at angular f = 2 pi k / N;
        // the Welch density differs by the constant 2 (2 pi N)^2 / N.
        let n = 64;
        let x: Vec<f64> = (0..n).map(|j| ((j * j) as f64 * 0.37).sin() + 0.1 * j as f64).collect();
        let p = welch_periodogram(
            &TimeSeries::from_values(x.clone()).unwrap(),
            n,
            0.0,
            Window::Rectangular,
        )
        .unwrap();
        let m = x.iter().sum::<f64>() / n as f64;
        for (idx, k) in (1..n / 2).enumerate() {
            let f = 2.0 * PI * k as f64 / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                re += (v - m) * (f * j as f64).cos();
                im += (v - m) * (f * j as f64).sin();
            }
            let norm = 2.0 * PI * n as f64;
            let i_f = (re / norm).powi(2) + (im / norm).powi(2);
            let constant = 2.0 * norm * norm / n as f64;
            let rel = (p.power[idx] - constant * i_f).abs() / p.power[idx];
            assert!(rel < 1e-10, "bin {k}: {rel}");
        }
    }

    #[test]
    fn white_noise_density_is_flat() {
        let gen = FbmGenerator::new(FbmParams::wiener(), 65_537).unwrap();
        let noise = increment_values(&gen.sample(&mut rng::stream(2, 0)));
        let p = welch_values(&noise, 256, 0.5, Window::Hamming).unwrap();
        let avg = p.power.iter().sum::<f64>() / p.power.len() as f64;
        assert!((avg - 2.0).abs() < 0.05, "{avg}");
    }

    #[test]
    fn welch_argument_errors() {
        let s = TimeSeries::from_values(vec![0.0; 100]).unwrap();
        assert!(welch_periodogram(&s, 4, 0.5, Window::Hann).is_err());
        assert!(welch_periodogram(&s, 128, 0.5, Window::Hann).is_err());
        assert!(welch_periodogram(&s, 32, 1.0, Window::Hann).is_err());
    }

    #[test]
    fn exact_power_law_recovers_beta() {
        let p = power_law(1.853, 0.7, 200);
        let fit = fit_loglog(&p, 0.0, 1.0).unwrap();
        assert!((fit.beta - 1.853).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
        assert_eq!(fit.classification, Classification::Fbm);
        assert!((fit.hurst.unwrap() - 0.4265).abs() < 1e-10);
        assert!((fit.log_intercept - 0.7f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn flat_and_steep_spectra() {
        let fit = fit_loglog(&power_law(0.0, 3.0, 50), 0.0, 1.0).unwrap();
        assert!(fit.beta.abs() < 1e-12);
        assert_eq!(fit.classification, Classification::Fgn);
        assert!((fit.hurst.unwrap() - 0.5).abs() < 1e-12);

        let fit = fit_loglog(&power_law(3.5, 1.0, 50), 0.0, 1.0).unwrap();
        assert_eq!(fit.classification, Classification::OutOfRange);
        assert!(fit.hurst.is_none());
    }

    #[test]
    fn boundaries_are_open() {
        assert_eq!(classify(1.0).0, Classification::OutOfRange);
        assert_eq!(classify(-1.0).0, Classification::OutOfRange);
        assert_eq!(classify(3.0).0, Classification::OutOfRange);
        assert_eq!(classify(0.999).0, Classification::Fgn);
        assert_eq!(classify(1.001).0, Classification::Fbm);
    }

    #[test]
    fn band_errors_and_zero_bins() {
        let mut p = power_law(2.0, 1.0, 20);
        assert!(fit_loglog(&p, 5.0, 6.0).is_err());
        p.power[3] = 0.0;
        let fit = fit_loglog(&p, 0.0, 1.0).unwrap();
        assert_eq!(fit.zero_power_excluded, 1);
        assert_eq!(fit.bins_used, 19);
        assert!(fit_loglog(&power_law(2.0, 1.0, 7), 0.0, 1.0).is_err());
    }

    #[test]
    fn slope_matches_normal_equations() {
        let p = Periodogram {
            power: (1..=40).map(|k| (k as f64 * 0.91).sin().abs() + 0.1).collect(),
            ..power_law(1.0, 1.0, 40)
        };
        let fit = fit_loglog(&p, 0.0, 1.0).unwrap();
        // 2x2 normal equations solved by Cramer's rule
        let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (f, s) in p.frequencies.iter().zip(&p.power) {
            let (x, y) = (f.ln(), s.ln());
            n += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(((-fit.beta) - slope).abs() <= 1e-10 * slope.abs().max(1.0));
    }

    #[test]
    fn wiener_classified_as_fbm() {
        let gen = FbmGenerator::new(FbmParams::wiener(), 4096).unwrap();
        let s = TimeSeries::from_values(gen.sample(&mut rng::stream(3, 0))).unwrap();
        let fit = estimate_hurst(&s, &SpectralConfig::default()).unwrap();
        assert_eq!(fit.classification, Classification::Fbm);
        assert!((fit.hurst.unwrap() - 0.5).abs() < 0.15);
    }

    #[test]
    fn fgn_classified_as_fgn() {
        let gen = FbmGenerator::new(FbmParams::new(0.3, 1.0).unwrap(), 4097).unwrap();
        let mut hits = 0;
        for r in 0..20 {
            let inc = increment_values(&gen.sample(&mut rng::stream(8, r)));
            let fit = estimate_hurst(&TimeSeries::from_values(inc).unwrap(), &SpectralConfig::default()).unwrap();
            hits += usize::from(fit.classification == Classification::Fgn);
        }
        assert!(hits >= 19, "{hits}/20");
    }

    proptest! {
        #[test]
        fn scale_equivariance(k in 0.01f64..100.0, seed in 0u64..50) {
            let gen = FbmGenerator::new(FbmParams::new(0.6, 1.0).unwrap(), 1024).unwrap();
            let x = gen.sample(&mut rng::stream(seed, 0));
            let s = TimeSeries::from_values(x.clone()).unwrap();
            let sk = TimeSeries::from_values(x.iter().map(|v| v * k).collect()).unwrap();
            let cfg = SpectralConfig::default();
            let (pa, a) = analyze_spectrum(&s, &cfg).unwrap();
            let (pb, b) = analyze_spectrum(&sk, &cfg).unwrap();
            for (u, v) in pa.power.iter().zip(&pb.power) {
                prop_assert!((v - u * k * k).abs() <= 1e-9 * v.abs());
            }
            prop_assert!((a.beta - b.beta).abs() < 1e-9);
            prop_assert_eq!(a.classification, b.classification);
            prop_assert!((b.log_intercept - a.log_intercept - 2.0 * k.ln()).abs() < 1e-8);
        }
    }
}
