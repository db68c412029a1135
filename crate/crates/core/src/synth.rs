//! Synthetic series `X(t) = r(t) + B_H(t)` with a known continuous
//! piecewise-linear trend, for self-tests and demos.

use chrono::NaiveDate;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{FbmGenerator, FbmParams};
use crate::rng;
use crate::series::TimeSeries;

/// End of one trend segment and its slope (per day).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendKnot {
    pub end: NaiveDate,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub start_date: NaiveDate,
    pub start_value: f64,
    pub trend: Vec<TrendKnot>,
    pub fbm: FbmParams,
    pub n_days: usize,
    #[serde(default)]
    pub missing_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

const REFERENCE_KNOTS: [(&str, f64); 14] = [
    ("2011-09-16", 0.0213),
    ("2012-02-27", -0.0264),
    ("2012-09-13", 0.0262),
    ("2013-03-07", -0.0311),
    ("2013-09-06", 0.0287),
    ("2014-03-07", -0.0256),
    ("2014-09-24", 0.0237),
    ("2015-03-01", -0.0418),
    ("2015-08-23", 0.0294),
    ("2016-03-19", -0.0145),
    ("2016-09-08", 0.0238),
    ("2017-02-16", -0.0261),
    ("2017-09-14", 0.0228),
    ("2017-12-31", -0.0346),
];

impl SynthSpec {
    /// Fourteen alternating segments from 2011-07-29 to 2017-12-31 (2348
    /// days) starting at 31.78, with `H = 0.427`, `D = 0.0846`.
    pub fn reference(seed: u64) -> Self {
        let trend = REFERENCE_KNOTS
            .iter()
            .map(|&(d, slope)| TrendKnot {
                end: NaiveDate::parse_from_str(d, "%Y-%m-%d").expect("valid date"),
                slope,
            })
            .collect();
        Self {
            start_date: NaiveDate::from_ymd_opt(2011, 7, 29).expect("valid date"),
            start_value: 31.78,
            trend,
            fbm: FbmParams {
                hurst: 0.427,
                diffusion: 0.0846,
            },
            n_days: 2348,
            missing_fraction: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fbm.validate()?;
        if self.n_days < 2 {
            return Err(Error::InvalidParameter("n_days must be at least 2".into()));
        }
        if !(0.0..0.5).contains(&self.missing_fraction) {
            return Err(Error::InvalidParameter(format!(
                "missing_fraction must lie in [0, 0.5), got {}",
                self.missing_fraction
            )));
        }
        if self.trend.is_empty() {
            return Err(Error::InvalidParameter("trend needs at least one segment".into()));
        }
        let mut prev = self.start_date;
        for (i, k) in self.trend.iter().enumerate() {
            if k.end <= prev {
                return Err(Error::InvalidParameter(format!(
                    "trend knot {i} is not after its predecessor"
                )));
            }
            prev = k.end;
        }
        if self.trend.windows(2).any(|w| !(w[0].slope * w[1].slope < 0.0)) {
            return Err(Error::InvalidParameter("trend slopes must alternate in sign".into()));
        }
        Ok(())
    }

    /// Knot positions in days since `start_date`.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.trend
            .iter()
            .map(|k| (k.end - self.start_date).num_days() as f64)
            .collect()
    }

    /// Continuous trend value at day `t`; the last slope continues past the
    /// final knot.
    pub fn trend_value(&self, t: f64) -> f64 {
        let mut v = self.start_value;
        let mut from = 0.0;
        for (k, end) in self.trend.iter().zip(self.breakpoints()) {
            if t <= end {
                return v + k.slope * (t - from);
            }
            v += k.slope * (end - from);
            from = end;
        }
        v + self.trend.last().map_or(0.0, |k| k.slope) * (t - from)
    }
}

/// Ground truth written next to a synthetic series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub start_date: NaiveDate,
    pub breakpoints: Vec<f64>,
    pub breakpoint_dates: Vec<NaiveDate>,
    pub slopes: Vec<f64>,
    pub hurst: f64,
    pub diffusion: f64,
    pub seed: u64,
    pub removed_days: Vec<f64>,
    pub trend: Vec<f64>,
    pub fbm_path: Vec<f64>,
}

/// Trend plus one fBm path on days `0..n_days`, with a random
/// `missing_fraction` of interior days removed.
pub fn synth_generate(spec: &SynthSpec) -> Result<(TimeSeries, SynthTruth)> {
    spec.validate()?;
    let n = spec.n_days;
    let gen = FbmGenerator::new(spec.fbm, n)?;
    let path = gen.sample(&mut rng::stream(rng::derive_seed(spec.seed, "fbm"), 0));
    let trend: Vec<f64> = (0..n).map(|i| spec.trend_value(i as f64)).collect();

    let interior = n.saturating_sub(2);
    let n_missing = (spec.missing_fraction * interior as f64).round() as usize;
    let mut removed: Vec<usize> = if n_missing > 0 {
        let mut r = rng::stream(rng::derive_seed(spec.seed, "missing"), 0);
        sample(&mut r, interior, n_missing).into_iter().map(|i| i + 1).collect()
    } else {
        Vec::new()
    };
    removed.sort_unstable();

    let mut keep = vec![true; n];
    for &i in &removed {
        keep[i] = false;
    }
    let (times, values): (Vec<f64>, Vec<f64>) = (0..n)
        .filter(|&i| keep[i])
        .map(|i| (i as f64, trend[i] + path[i]))
        .unzip();
    let series = TimeSeries::new(times, values, spec.start_date)?;
    let truth = SynthTruth {
        start_date: spec.start_date,
        breakpoints: spec.breakpoints(),
        breakpoint_dates: spec.trend.iter().map(|k| k.end).collect(),
        slopes: spec.trend.iter().map(|k| k.slope).collect(),
        hurst: spec.fbm.hurst,
        diffusion: spec.fbm.diffusion,
        seed: spec.seed,
        removed_days: removed.iter().map(|&i| i as f64).collect(),
        trend,
        fbm_path: path,
    };
    Ok((series, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shape() {
        let spec = SynthSpec::reference(1);
        spec.validate().unwrap();
        assert_eq!(spec.trend.len(), 14);
        assert_eq!(*spec.breakpoints().last().unwrap(), 2347.0);
        let peaks = spec.trend.iter().filter(|k| k.slope > 0.0).count();
        assert_eq!(peaks, 7);
        assert!((spec.trend_value(0.0) - 31.78).abs() < 1e-12);
        // 2011-09-16 is day 49
        assert!((spec.trend_value(49.0) - (31.78 + 49.0 * 0.0213)).abs() < 1e-12);
    }

    #[test]
    fn noiseless_limit() {
        let mut spec = SynthSpec::reference(2);
        // path sd is sqrt(2D) t^H, about 4e-5 at t = 2347 for D = 1e-12
        spec.fbm.diffusion = 1e-16;
        let (s, truth) = synth_generate(&spec).unwrap();
        assert_eq!(s.len(), 2348);
        for (i, v) in s.values().iter().enumerate() {
            assert!((v - truth.trend[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SynthSpec::reference(3);
        let (a, ta) = synth_generate(&spec).unwrap();
        let (b, tb) = synth_generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = synth_generate(&SynthSpec::reference(4)).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn missing_days_are_interior() {
        let mut spec = SynthSpec::reference(5);
        spec.missing_fraction = 0.1;
        let (s, truth) = synth_generate(&spec).unwrap();
        assert_eq!(truth.removed_days.len(), 235);
        assert_eq!(s.len(), 2348 - 235);
        assert_eq!(s.first_time(), 0.0);
        assert_eq!(s.last_time(), 2347.0);
        for d in &truth.removed_days {
            assert!(s.index_of(*d).is_none());
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = SynthSpec::reference(0);
        spec.missing_fraction = 0.5;
        assert!(synth_generate(&spec).is_err());
        let mut spec = SynthSpec::reference(0);
        spec.trend[3].slope = -spec.trend[3].slope;
        assert!(spec.validate().is_err());
        let mut spec = SynthSpec::reference(0);
        spec.trend.swap(2, 3);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn trend_extends_last_slope() {
        let mut spec = SynthSpec::reference(0);
        spec.n_days = 2400;
        let end = spec.trend_value(2347.0);
        assert!((spec.trend_value(2357.0) - (end - 0.346)).abs() < 1e-9);
        assert_eq!(synth_generate(&spec).unwrap().0.len(), 2400);
    }
}
