//! Trend-plus-fBm modelling of daily series.
//!
//! A series is decomposed as `X(t) = r(t) + B_H(t)`, where `r` is a
//! piecewise-linear trend with alternating slopes anchored at local extrema
//! and `B_H` is a fractional Brownian motion with covariance
//! `D (t^2H + s^2H - |t - s|^2H)`. The crate covers loading and gap filling,
//! trend fitting, fBm simulation, spectral estimation of `H`, and the
//! goodness-of-fit tests used to check the residual model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fbm;
pub mod hypothesis;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod series;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod trend;

pub use error::{Error, Result};
pub use fbm::{
    estimate_diffusion, estimate_diffusion_with, fbm_cov, simulate_fbm, DiffusionConvention, DiffusionEstimate,
    FbmGenerator, FbmParams, FbmPath, SimulationMethod,
};
pub use hypothesis::{Decision, TestReport};
pub use pipeline::{execute, run_pipeline, PipelineConfig, PipelineError, RunReport};
pub use plot::{emit_plots, PlotOutput};
pub use series::{interpolate_daily, load_csv, subsample_weekly, GapReport, TimeSeries};
pub use spectral::{
    analyze_spectrum, classify, estimate_hurst, fit_loglog, welch_periodogram, Classification, Periodogram,
    SpectralConfig, SpectralFit, Window,
};
pub use synth::{synth_generate, SynthSpec, SynthTruth, TrendKnot};
pub use trend::{
    detrend, evaluate_trend, find_extrema, fit_trend, ols_fit, refine_breakpoint, select_best_candidate, ExtremaSet,
    Extremum, ExtremumKind, PiecewiseLinearTrend, Segment,
};
