//! End-to-end run: load or synthesize, interpolate, fit the trend, detrend,
//! then the Brownian-motion test, spectral Hurst estimate, diffusion
//! estimate, Gaussianity protocols and the DMA subset protocol.
//!
//! Statistical rejections are recorded in the report. Operational errors stop
//! the run and carry the stage name together with the partial report.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{estimate_diffusion_with, DiffusionConvention, DiffusionEstimate, FbmParams};
use crate::hypothesis::briane::{bm_quantile_table, briane_bm_test, BmQuantileConfig};
use crate::hypothesis::dma::CovarianceMode;
use crate::hypothesis::protocols::{
    dma_subset_protocol, rjb_table, sw_simulation_protocol_with, DmaProtocolConfig, DmaProtocolSummary,
    ResidualSimulation, RjbTable, SwSummary,
};
use crate::hypothesis::TestReport;
use crate::plot;
use crate::rng;
use crate::series::{
    interpolate_daily, load_csv, subsample_weekly, write_date_value_csv, write_series_csv, GapReport, TimeSeries,
};
use crate::spectral::{analyze_spectrum, Periodogram, SpectralConfig, SpectralFit};
use crate::synth::{synth_generate, SynthSpec, SynthTruth};
use crate::trend::{
    detrend, find_extrema, fit_trend, write_breakpoints_csv, ExtremaSet, PiecewiseLinearTrend, TrendRecord,
};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPreset {
    Reference,
}

/// Exactly one of `path`, `synth` or `preset`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub preset: Option<SynthPreset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendConfig {
    pub window: usize,
    pub min_separation: usize,
    pub radius: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            window: 45,
            min_separation: 120,
            radius: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmTestConfig {
    pub alpha: f64,
    pub dimension: usize,
    pub paths: usize,
    pub steps: usize,
    pub table_seed: u64,
}

impl Default for BmTestConfig {
    fn default() -> Self {
        let q = BmQuantileConfig::default();
        Self {
            alpha: 0.05,
            dimension: q.dimension,
            paths: q.paths,
            steps: q.steps,
            table_seed: q.seed,
        }
    }
}

impl BmTestConfig {
    pub fn quantile_config(&self) -> BmQuantileConfig {
        BmQuantileConfig {
            dimension: self.dimension,
            paths: self.paths,
            steps: self.steps,
            seed: self.table_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianityConfig {
    pub sw_sims: usize,
    pub sim_time_step: f64,
    pub rjb_ns: Vec<usize>,
    pub rjb_blocks: usize,
    pub rjb_iterations: usize,
    pub alpha: f64,
}

impl Default for GaussianityConfig {
    fn default() -> Self {
        Self {
            sw_sims: 10_000,
            sim_time_step: 1.0,
            rjb_ns: vec![100, 500, 1000],
            rjb_blocks: 10,
            rjb_iterations: 10_000,
            alpha: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmaStageConfig {
    pub subsets: usize,
    pub chi_square_samples: usize,
    pub covariance_mode: CovarianceMode,
    pub alpha: f64,
}

impl Default for DmaStageConfig {
    fn default() -> Self {
        let d = DmaProtocolConfig::default();
        Self {
            subsets: 10,
            chi_square_samples: d.chi_square_samples,
            covariance_mode: d.covariance_mode,
            alpha: d.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Not part of the report, so runs into different directories compare equal.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub plots: bool,
    pub input: InputConfig,
    pub trend: TrendConfig,
    pub spectral: SpectralConfig,
    pub bm_test: BmTestConfig,
    pub diffusion_convention: DiffusionConvention,
    pub gaussianity: GaussianityConfig,
    pub dma: DmaStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 20_110_729,
            output_dir: PathBuf::from("fbmtrend-out"),
            plots: true,
            input: InputConfig::default(),
            trend: TrendConfig::default(),
            spectral: SpectralConfig::default(),
            bm_test: BmTestConfig::default(),
            diffusion_convention: DiffusionConvention::default(),
            gaussianity: GaussianityConfig::default(),
            dma: DmaStageConfig::default(),
        }
    }
}

fn check_alpha(name: &str, a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1), got {a}")))
    }
}

impl PipelineConfig {
    /// Parse without validating, so callers can apply overrides first.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse (without validating) a TOML file; a relative `input.path` is
    /// taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(dir)) = (cfg.input.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [
            self.input.path.is_some(),
            self.input.synth.is_some(),
            self.input.preset.is_some(),
        ];
        match sources.iter().filter(|&&s| s).count() {
            1 => {}
            0 => {
                return Err(Error::Config(
                    "no input: set input.path, input.synth or input.preset".into(),
                ))
            }
            _ => {
                return Err(Error::Config(
                    "set only one of input.path, input.synth, input.preset".into(),
                ))
            }
        }
        check_alpha("bm_test.alpha", self.bm_test.alpha)?;
        check_alpha("gaussianity.alpha", self.gaussianity.alpha)?;
        check_alpha("dma.alpha", self.dma.alpha)?;
        if self.trend.window == 0 || self.trend.min_separation < self.trend.window {
            return Err(Error::Config("need trend.min_separation >= trend.window >= 1".into()));
        }
        if !(self.gaussianity.sim_time_step > 0.0) {
            return Err(Error::Config("gaussianity.sim_time_step must be positive".into()));
        }
        if self.gaussianity.sw_sims == 0 || self.gaussianity.rjb_blocks == 0 || self.dma.subsets == 0 {
            return Err(Error::Config("simulation counts must be positive".into()));
        }
        Ok(())
    }

    /// Synthetic spec for `input.synth` or `input.preset`, if either is set.
    pub fn synth_spec(&self) -> Option<SynthSpec> {
        match (&self.input.synth, self.input.preset) {
            (Some(s), _) => Some(s.clone()),
            (None, Some(SynthPreset::Reference)) => Some(SynthSpec::reference(rng::derive_seed(self.seed, "synth"))),
            (None, None) => None,
        }
    }

    /// Raw input series, with the ground truth when it is synthetic.
    pub fn load_input(&self) -> Result<(TimeSeries, Option<SynthTruth>)> {
        match self.synth_spec() {
            Some(spec) => synth_generate(&spec).map(|(s, t)| (s, Some(t))),
            None => match &self.input.path {
                Some(p) => Ok((load_csv(p)?, None)),
                None => Err(Error::Config(
                    "no input: set input.path, input.synth or input.preset".into(),
                )),
            },
        }
    }

    pub fn dma_protocol_config(&self) -> DmaProtocolConfig {
        DmaProtocolConfig {
            chi_square_samples: self.dma.chi_square_samples,
            covariance_mode: self.dma.covariance_mode,
            alpha: self.dma.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub source: String,
    pub observations: usize,
    pub first_date: String,
    pub last_date: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub hurst: f64,
    pub diffusion: f64,
    pub removed_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub trend: PiecewiseLinearTrend,
    pub records: Vec<TrendRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub stages_completed: Vec<String>,
    pub failure: Option<StageFailure>,
    pub input: Option<InputSummary>,
    pub truth: Option<TruthSummary>,
    /// Daily series after interpolation.
    pub series: Option<TimeSeries>,
    pub gaps: Option<GapReport>,
    pub extrema: Option<ExtremaSet>,
    pub trend: Option<TrendReport>,
    /// `X - r` on the daily grid.
    pub residuals: Option<TimeSeries>,
    pub bm_test: Option<TestReport>,
    pub periodogram: Option<Periodogram>,
    pub spectral: Option<SpectralFit>,
    pub diffusion: Option<DiffusionEstimate>,
    pub fbm_params: Option<FbmParams>,
    pub shapiro_wilk: Option<SwSummary>,
    pub rjb: Option<RjbTable>,
    pub dma: Option<DmaProtocolSummary>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    fn new(cfg: &PipelineConfig) -> Self {
        Self {
            tool: "fbmtrend".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config: cfg.clone(),
            stages_completed: Vec::new(),
            failure: None,
            input: None,
            truth: None,
            series: None,
            gaps: None,
            extrema: None,
            trend: None,
            residuals: None,
            bm_test: None,
            periodogram: None,
            spectral: None,
            diffusion: None,
            fbm_params: None,
            shapiro_wilk: None,
            rjb: None,
            dma: None,
            artifacts: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// A stage failed. `report` holds everything computed before it.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: String,
    pub source: Error,
    pub report: Box<RunReport>,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

struct Runner {
    report: RunReport,
}

impl Runner {
    fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut RunReport) -> Result<T>,
    ) -> std::result::Result<T, PipelineError> {
        match f(&mut self.report) {
            Ok(v) => {
                self.report.stages_completed.push(name.to_string());
                Ok(v)
            }
            Err(source) => {
                self.report.failure = Some(StageFailure {
                    stage: name.to_string(),
                    message: source.to_string(),
                });
                Err(PipelineError {
                    stage: name.to_string(),
                    source,
                    report: Box::new(self.report.clone()),
                })
            }
        }
    }
}

/// Run all stages without writing anything.
pub fn execute(cfg: &PipelineConfig) -> std::result::Result<RunReport, PipelineError> {
    let mut run = Runner {
        report: RunReport::new(cfg),
    };
    run.stage("config", |_| cfg.validate())?;

    let raw = run.stage("load", |r| {
        let (series, truth) = cfg.load_input()?;
        let source = match (&truth, &cfg.input.path) {
            (Some(t), _) => format!("synthetic (seed {})", t.seed),
            (None, Some(p)) => p.display().to_string(),
            (None, None) => String::new(),
        };
        r.truth = truth.map(|t| TruthSummary {
            removed_days: t.removed_days.len(),
            breakpoints: t.breakpoints,
            slopes: t.slopes,
            hurst: t.hurst,
            diffusion: t.diffusion,
        });
        r.input = Some(InputSummary {
            source,
            observations: series.len(),
            first_date: series.date_of(series.first_time()).to_string(),
            last_date: series.date_of(series.last_time()).to_string(),
        });
        Ok(series)
    })?;

    let x = run.stage("interpolate", |r| {
        let (x, gaps) = interpolate_daily(&raw);
        r.series = Some(x.clone());
        r.gaps = Some(gaps);
        Ok(x)
    })?;

    let extrema = run.stage("extrema", |r| {
        let e = find_extrema(&x, cfg.trend.min_separation, cfg.trend.window)?;
        r.extrema = Some(e.clone());
        Ok(e)
    })?;

    let trend = run.stage("fit_trend", |r| {
        let t = fit_trend(&x, &extrema, cfg.trend.radius)?;
        r.trend = Some(TrendReport {
            records: t.to_records(x.epoch()),
            trend: t.clone(),
        });
        Ok(t)
    })?;

    let b = run.stage("detrend", |r| {
        let b = detrend(&x, &trend)?;
        r.residuals = Some(b.clone());
        Ok(b)
    })?;

    run.stage("briane_bm_test", |r| {
        let table = bm_quantile_table(&cfg.bm_test.quantile_config())?;
        r.bm_test = Some(briane_bm_test(&b, cfg.bm_test.alpha, &table)?);
        Ok(())
    })?;

    let hurst = run.stage("estimate_hurst", |r| {
        let (p, fit) = analyze_spectrum(&b, &cfg.spectral)?;
        r.periodogram = Some(p);
        let h = fit.hurst;
        let class = fit.classification;
        r.spectral = Some(fit);
        h.ok_or_else(|| Error::Degenerate(format!("spectrum classified as {class}, no fBm Hurst exponent")))
    })?;

    let params = run.stage("estimate_diffusion", |r| {
        let d = estimate_diffusion_with(&b, cfg.diffusion_convention)?;
        r.diffusion = Some(d);
        let p = FbmParams::new(hurst, d.value)?;
        r.fbm_params = Some(p);
        Ok(p)
    })?;

    let sim = run.stage("sw_simulation_protocol", |r| {
        let xw = subsample_weekly(&x)?;
        let sim = ResidualSimulation::new(&xw, &trend, params, cfg.gaussianity.sim_time_step)?;
        r.shapiro_wilk = Some(sw_simulation_protocol_with(
            &sim,
            cfg.gaussianity.sw_sims,
            rng::derive_seed(cfg.seed, "sw"),
        )?);
        Ok(sim)
    })?;

    run.stage("rjb_block_protocol", |r| {
        r.rjb = Some(rjb_table(
            &sim,
            &cfg.gaussianity.rjb_ns,
            cfg.gaussianity.rjb_blocks,
            cfg.gaussianity.alpha,
            cfg.gaussianity.rjb_iterations,
            rng::derive_seed(cfg.seed, "rjb"),
        )?);
        Ok(())
    })?;

    run.stage("dma_subset_protocol", |r| {
        let dc = cfg.dma_protocol_config();
        r.dma = Some(dma_subset_protocol(
            &b,
            &params,
            cfg.dma.subsets,
            &dc,
            rng::derive_seed(cfg.seed, "dma"),
        )?);
        Ok(())
    })?;

    Ok(run.report)
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<String> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(name.to_string())
}

/// CSV tables (and plots when enabled) for whatever the report contains.
/// Returns the file names written.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    if let Some(s) = &report.series {
        files.push(write_file(dir, "series.csv", |w| {
            write_series_csv(w, s, report.gaps.as_ref())
        })?);
    }
    if let (Some(t), Some(s)) = (&report.trend, &report.series) {
        files.push(write_file(dir, "breakpoints.csv", |w| {
            write_breakpoints_csv(w, &t.trend, s.epoch())
        })?);
    }
    if let Some(b) = &report.residuals {
        files.push(write_file(dir, "residuals.csv", |w| write_date_value_csv(w, b))?);
    }
    if let Some(p) = &report.periodogram {
        files.push(write_file(dir, "periodogram.csv", |w| p.write_csv(w))?);
    }
    if let Some(sw) = &report.shapiro_wilk {
        files.push(write_file(dir, "sw_histogram.csv", |w| sw.write_csv(w))?);
    }
    if let Some(t) = &report.rjb {
        files.push(write_file(dir, "rjb_table.csv", |w| t.write_csv(w))?);
    }
    if let Some(d) = &report.dma {
        files.push(write_file(dir, "dma_table.csv", |w| d.write_table_csv(w))?);
        files.push(write_file(dir, "dma_pvalues.csv", |w| d.write_pvalues_csv(w))?);
    }
    if report.config.plots {
        files.extend(plot::emit_plots(report, dir)?.files);
    }
    Ok(files)
}

fn finish(mut report: RunReport, dir: &Path) -> Result<RunReport> {
    report.artifacts = write_artifacts(&report, dir)?;
    report.artifacts.push(REPORT_FILE.to_string());
    let json = report.to_json()?;
    let path = dir.join(REPORT_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Execute and write `report.json` plus artifacts into `cfg.output_dir`.
/// On a stage failure the partial report and artifacts are still written.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<RunReport, PipelineError> {
    let dir = cfg.output_dir.clone();
    match execute(cfg) {
        Ok(report) => finish(report, &dir).map_err(|source| PipelineError {
            stage: "write_outputs".into(),
            report: Box::new(RunReport::new(cfg)),
            source,
        }),
        Err(mut e) => {
            if let Ok(r) = finish((*e.report).clone(), &dir) {
                e.report = Box::new(r);
            }
            Err(e)
        }
    }
}
