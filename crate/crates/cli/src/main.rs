use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fbmtrend_core::hypothesis::briane::{bm_quantile_table, briane_bm_test};
use fbmtrend_core::hypothesis::dma::{dma_test, DmaConfig};
use fbmtrend_core::hypothesis::protocols::{
    dma_subset_protocol, rjb_table, sw_simulation_protocol_with, ResidualSimulation,
};
use fbmtrend_core::pipeline::{run_pipeline, InputConfig, SynthPreset};
use fbmtrend_core::series::{write_date_value_csv, write_series_csv};
use fbmtrend_core::trend::write_breakpoints_csv;
use fbmtrend_core::{
    analyze_spectrum, detrend, emit_plots, estimate_diffusion_with, find_extrema, fit_trend, interpolate_daily, rng,
    subsample_weekly, Error, FbmParams, PiecewiseLinearTrend, PipelineConfig, Result, RunReport, TimeSeries,
};

/// Trend plus fractional Brownian motion analysis of daily series.
#[derive(Parser)]
#[command(name = "fbmtrend", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Input {
    /// Daily CSV with `date,value` rows (ISO dates, optional header).
    #[arg(long, value_name = "CSV", conflicts_with = "preset")]
    input: Option<PathBuf>,
    /// Use the built-in reference synthetic dataset.
    #[arg(long)]
    preset: bool,
}

#[derive(Args, Clone)]
struct Residuals {
    /// Input is already detrended; skip the trend fit.
    #[arg(long)]
    detrended: bool,
}

#[derive(Args, Clone)]
struct Params {
    /// Hurst exponent; estimated from the residual spectrum when omitted.
    #[arg(long)]
    hurst: Option<f64>,
    /// Diffusion coefficient; estimated from the increments when omitted.
    #[arg(long)]
    diffusion: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trend-plus-fBm series and its ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Length of the daily grid.
        #[arg(long)]
        n_days: Option<usize>,
        /// Fraction of interior days to drop, in [0, 0.5).
        #[arg(long)]
        missing_fraction: Option<f64>,
        #[arg(long)]
        hurst: Option<f64>,
        #[arg(long)]
        diffusion: Option<f64>,
    },
    /// Locate extrema and fit the piecewise-linear trend.
    FitTrend {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Half-width in days of the extremum neighbourhood.
        #[arg(long)]
        window: Option<usize>,
        /// Minimum spacing in days between extrema of one kind.
        #[arg(long)]
        min_separation: Option<usize>,
        /// Breakpoint refinement radius in observations.
        #[arg(long)]
        radius: Option<usize>,
    },
    /// Welch periodogram, spectral exponent and diffusion coefficient.
    EstimateHurst {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        residuals: Residuals,
    },
    /// Test the residuals against Brownian motion.
    TestBm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        residuals: Residuals,
        /// Significance level.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Shapiro-Wilk and robust Jarque-Bera simulation protocols.
    TestGauss {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        params: Params,
        /// Number of Shapiro-Wilk replicates.
        #[arg(long)]
        sims: Option<usize>,
        /// Replicates per RJB block (repeatable).
        #[arg(long = "rjb-n")]
        rjb_ns: Vec<usize>,
        /// Number of RJB blocks.
        #[arg(long)]
        blocks: Option<usize>,
    },
    /// Detrending moving-average test.
    TestDma {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        residuals: Residuals,
        #[command(flatten)]
        params: Params,
        /// Single test with this window; otherwise sweep windows over subsets.
        #[arg(long)]
        window: Option<usize>,
        /// Number of contiguous subsets for the window sweep.
        #[arg(long)]
        subsets: Option<usize>,
    },
    /// Run every stage and write the report, tables and plots.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Render SVG plots from an existing report.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Report JSON written by `pipeline`.
        #[arg(long, value_name = "PATH")]
        report: PathBuf,
    },
}

fn config(common: &Common, input: Option<&Input>) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(i) = input {
        if let Some(p) = &i.input {
            cfg.input = InputConfig {
                path: Some(p.clone()),
                ..InputConfig::default()
            };
        } else if i.preset {
            cfg.input = InputConfig {
                preset: Some(SynthPreset::Reference),
                ..InputConfig::default()
            };
        }
    }
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f(BufWriter::new(file))
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

struct Prepared {
    x: TimeSeries,
    trend: Option<PiecewiseLinearTrend>,
    b: TimeSeries,
}

fn prepare(cfg: &PipelineConfig, detrended: bool) -> Result<Prepared> {
    let (raw, _) = cfg.load_input()?;
    let (x, _) = interpolate_daily(&raw);
    if detrended {
        return Ok(Prepared {
            b: x.clone(),
            x,
            trend: None,
        });
    }
    let extrema = find_extrema(&x, cfg.trend.min_separation, cfg.trend.window)?;
    let trend = fit_trend(&x, &extrema, cfg.trend.radius)?;
    let b = detrend(&x, &trend)?;
    Ok(Prepared {
        x,
        trend: Some(trend),
        b,
    })
}

fn resolve_params(cfg: &PipelineConfig, b: &TimeSeries, p: &Params) -> Result<FbmParams> {
    let hurst = match p.hurst {
        Some(h) => h,
        None => {
            let (_, fit) = analyze_spectrum(b, &cfg.spectral)?;
            fit.hurst.ok_or_else(|| {
                Error::Degenerate(format!(
                    "spectrum classified as {}; pass --hurst explicitly",
                    fit.classification
                ))
            })?
        }
    };
    let diffusion = match p.diffusion {
        Some(d) => d,
        None => estimate_diffusion_with(b, cfg.diffusion_convention)?.value,
    };
    FbmParams::new(hurst, diffusion)
}

fn cmd_synth(
    common: &Common,
    n_days: Option<usize>,
    missing: Option<f64>,
    hurst: Option<f64>,
    diffusion: Option<f64>,
) -> Result<()> {
    let mut cfg = config(common, None)?;
    if cfg.synth_spec().is_none() {
        cfg.input.preset = Some(SynthPreset::Reference);
    }
    let mut spec = cfg.synth_spec().expect("synthetic input");
    if common.seed.is_some() && cfg.input.synth.is_some() {
        spec.seed = cfg.seed;
    }
    if let Some(n) = n_days {
        spec.n_days = n;
    }
    if let Some(m) = missing {
        spec.missing_fraction = m;
    }
    if let Some(h) = hurst {
        spec.fbm.hurst = h;
    }
    if let Some(d) = diffusion {
        spec.fbm.diffusion = d;
    }
    let (series, truth) = fbmtrend_core::synth_generate(&spec)?;
    let dir = out_dir(&cfg)?;
    write_with(dir, "series.csv", |w| write_date_value_csv(w, &series))?;
    write_json(dir, "truth.json", &json!({ "spec": spec, "truth": truth }))?;
    println!(
        "synth: {} observations ({} days removed), H = {}, D = {} -> {}",
        series.len(),
        truth.removed_days.len(),
        truth.hurst,
        truth.diffusion,
        dir.display()
    );
    Ok(())
}

fn cmd_fit_trend(
    common: &Common,
    input: &Input,
    window: Option<usize>,
    min_separation: Option<usize>,
    radius: Option<usize>,
) -> Result<()> {
    let mut cfg = config(common, Some(input))?;
    if let Some(w) = window {
        cfg.trend.window = w;
    }
    if let Some(s) = min_separation {
        cfg.trend.min_separation = s;
    }
    if let Some(r) = radius {
        cfg.trend.radius = r;
    }
    let (raw, _) = cfg.load_input()?;
    let (x, gaps) = interpolate_daily(&raw);
    let extrema = find_extrema(&x, cfg.trend.min_separation, cfg.trend.window)?;
    let trend = fit_trend(&x, &extrema, cfg.trend.radius)?;
    let b = detrend(&x, &trend)?;
    let dir = out_dir(&cfg)?;
    write_with(dir, "series.csv", |w| write_series_csv(w, &x, Some(&gaps)))?;
    write_with(dir, "breakpoints.csv", |w| write_breakpoints_csv(w, &trend, x.epoch()))?;
    write_with(dir, "residuals.csv", |w| write_date_value_csv(w, &b))?;
    let records = trend.to_records(x.epoch());
    write_json(
        dir,
        "trend.json",
        &json!({ "gaps": gaps, "extrema": extrema, "trend": trend, "records": records }),
    )?;
    println!("fit-trend: {} segments", trend.segments.len());
    for r in &records {
        println!(
            "  {} .. {}  slope {:+.5}  R^2 {:.4}",
            r.start_date, r.end_date, r.slope_per_day, r.r_squared
        );
    }
    if !trend.sign_violations.is_empty() {
        println!(
            "  slope sign does not alternate after segments {:?}",
            trend.sign_violations
        );
    }
    Ok(())
}

fn cmd_estimate_hurst(common: &Common, input: &Input, residuals: &Residuals) -> Result<()> {
    let cfg = config(common, Some(input))?;
    let p = prepare(&cfg, residuals.detrended)?;
    let (periodogram, fit) = analyze_spectrum(&p.b, &cfg.spectral)?;
    let diffusion = estimate_diffusion_with(&p.b, cfg.diffusion_convention)?;
    let dir = out_dir(&cfg)?;
    write_with(dir, "periodogram.csv", |w| periodogram.write_csv(w))?;
    write_json(dir, "hurst.json", &json!({ "spectral": fit, "diffusion": diffusion }))?;
    let h = fit.hurst.map_or_else(|| "none".to_string(), |h| format!("{h:.4}"));
    println!(
        "estimate-hurst: beta = {:.4} ({}), H = {h}, D = {:.5}, R^2 = {:.3} over {} bins",
        fit.beta, fit.classification, diffusion.value, fit.r_squared, fit.bins_used
    );
    Ok(())
}

fn cmd_test_bm(common: &Common, input: &Input, residuals: &Residuals, alpha: Option<f64>) -> Result<()> {
    let mut cfg = config(common, Some(input))?;
    if let Some(a) = alpha {
        cfg.bm_test.alpha = a;
    }
    let p = prepare(&cfg, residuals.detrended)?;
    let table = bm_quantile_table(&cfg.bm_test.quantile_config())?;
    let report = briane_bm_test(&p.b, cfg.bm_test.alpha, &table)?;
    let dir = out_dir(&cfg)?;
    write_json(dir, "bm_test.json", &serde_json::to_value(&report)?)?;
    println!("test-bm: statistic {:.4}, {}", report.statistic, report.decision);
    Ok(())
}

fn cmd_test_gauss(
    common: &Common,
    input: &Input,
    params: &Params,
    sims: Option<usize>,
    rjb_ns: &[usize],
    blocks: Option<usize>,
) -> Result<()> {
    let mut cfg = config(common, Some(input))?;
    if let Some(s) = sims {
        cfg.gaussianity.sw_sims = s;
    }
    if !rjb_ns.is_empty() {
        cfg.gaussianity.rjb_ns = rjb_ns.to_vec();
    }
    if let Some(b) = blocks {
        cfg.gaussianity.rjb_blocks = b;
    }
    let p = prepare(&cfg, false)?;
    let fp = resolve_params(&cfg, &p.b, params)?;
    let xw = subsample_weekly(&p.x)?;
    let trend = p.trend.as_ref().expect("trend fitted");
    let sim = ResidualSimulation::new(&xw, trend, fp, cfg.gaussianity.sim_time_step)?;
    let g = &cfg.gaussianity;
    let sw = sw_simulation_protocol_with(&sim, g.sw_sims, rng::derive_seed(cfg.seed, "sw"))?;
    let rjb = rjb_table(
        &sim,
        &g.rjb_ns,
        g.rjb_blocks,
        g.alpha,
        g.rjb_iterations,
        rng::derive_seed(cfg.seed, "rjb"),
    )?;
    let dir = out_dir(&cfg)?;
    write_with(dir, "sw_histogram.csv", |w| sw.write_csv(w))?;
    write_with(dir, "rjb_table.csv", |w| rjb.write_csv(w))?;
    write_json(
        dir,
        "gauss.json",
        &json!({ "fbm_params": fp, "shapiro_wilk": sw, "rjb": rjb }),
    )?;
    println!(
        "test-gauss: H = {:.4}, D = {:.5}; {:.1}% of {} Shapiro-Wilk replicates have W >= {}",
        fp.hurst,
        fp.diffusion,
        100.0 * sw.pass_fraction,
        sw.n_sims,
        sw.threshold
    );
    for col in &rjb.columns {
        let pcts: Vec<String> = col.percentages.iter().map(|p| format!("{p:.0}")).collect();
        println!("  RJB n = {}: accepted % per block [{}]", col.n, pcts.join(", "));
    }
    Ok(())
}

fn cmd_test_dma(
    common: &Common,
    input: &Input,
    residuals: &Residuals,
    params: &Params,
    window: Option<usize>,
    subsets: Option<usize>,
) -> Result<()> {
    let mut cfg = config(common, Some(input))?;
    if let Some(s) = subsets {
        cfg.dma.subsets = s;
    }
    let p = prepare(&cfg, residuals.detrended)?;
    let fp = resolve_params(&cfg, &p.b, params)?;
    let dir = out_dir(&cfg)?;
    let seed = rng::derive_seed(cfg.seed, "dma");
    match window {
        Some(m) => {
            let dc = DmaConfig {
                window: m,
                chi_square_samples: cfg.dma.chi_square_samples,
                covariance_mode: cfg.dma.covariance_mode,
            };
            let report = dma_test(&p.b, &fp, &dc, cfg.dma.alpha, seed)?;
            write_json(dir, "dma.json", &json!({ "fbm_params": fp, "test": report }))?;
            println!(
                "test-dma: m = {m}, S^2 = {:.5}, p = {:.4}, {}",
                report.statistic,
                report.p_value.unwrap_or(f64::NAN),
                report.decision
            );
        }
        None => {
            let summary = dma_subset_protocol(&p.b, &fp, cfg.dma.subsets, &cfg.dma_protocol_config(), seed)?;
            write_with(dir, "dma_table.csv", |w| summary.write_table_csv(w))?;
            write_with(dir, "dma_pvalues.csv", |w| summary.write_pvalues_csv(w))?;
            write_json(dir, "dma.json", &json!({ "fbm_params": fp, "summary": summary }))?;
            println!(
                "test-dma: {} subsets, overall acceptance {:.1}%",
                summary.rows.len(),
                100.0 * summary.overall_accept_fraction
            );
        }
    }
    Ok(())
}

fn cmd_pipeline(common: &Common, input: &Input) -> Result<bool> {
    let cfg = config(common, Some(input))?;
    let (report, failure) = match run_pipeline(&cfg) {
        Ok(r) => (r, None),
        Err(e) => {
            let msg = e.to_string();
            (*e.report, Some(msg))
        }
    };
    println!(
        "pipeline: {} of 12 stages completed, {} artifacts in {}",
        report.stages_completed.len(),
        report.artifacts.len(),
        cfg.output_dir.display()
    );
    print_summary(&report);
    if let Some(msg) = failure {
        eprintln!("error: {msg}");
        return Ok(false);
    }
    Ok(true)
}

fn print_summary(r: &RunReport) {
    if let Some(t) = &r.bm_test {
        println!("  BM test: statistic {:.4}, {}", t.statistic, t.decision);
    }
    if let Some(s) = &r.spectral {
        println!("  spectrum: beta {:.4}, {}", s.beta, s.classification);
    }
    if let Some(p) = &r.fbm_params {
        println!("  fBm: H = {:.4}, D = {:.5}", p.hurst, p.diffusion);
    }
    if let Some(sw) = &r.shapiro_wilk {
        println!(
            "  Shapiro-Wilk: {:.1}% with W >= {}",
            100.0 * sw.pass_fraction,
            sw.threshold
        );
    }
    if let Some(d) = &r.dma {
        println!("  DMA: overall acceptance {:.1}%", 100.0 * d.overall_accept_fraction);
    }
}

fn cmd_plot(common: &Common, report: &Path) -> Result<()> {
    let mut cfg = config(common, None)?;
    if common.out.is_none() {
        cfg.output_dir = report.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    }
    let r = RunReport::load(report)?;
    let dir = out_dir(&cfg)?;
    let out = emit_plots(&r, dir)?;
    for f in &out.files {
        println!("wrote {}", dir.join(f).display());
    }
    for s in &out.skipped {
        println!("skipped: {s}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth {
            common,
            n_days,
            missing_fraction,
            hurst,
            diffusion,
        } => cmd_synth(common, *n_days, *missing_fraction, *hurst, *diffusion)?,
        Command::FitTrend {
            common,
            input,
            window,
            min_separation,
            radius,
        } => cmd_fit_trend(common, input, *window, *min_separation, *radius)?,
        Command::EstimateHurst {
            common,
            input,
            residuals,
        } => cmd_estimate_hurst(common, input, residuals)?,
        Command::TestBm {
            common,
            input,
            residuals,
            alpha,
        } => cmd_test_bm(common, input, residuals, *alpha)?,
        Command::TestGauss {
            common,
            input,
            params,
            sims,
            rjb_ns,
            blocks,
        } => cmd_test_gauss(common, input, params, *sims, rjb_ns, *blocks)?,
        Command::TestDma {
            common,
            input,
            residuals,
            params,
            window,
            subsets,
        } => cmd_test_dma(common, input, residuals, params, *window, *subsets)?,
        Command::Pipeline { common, input } => return cmd_pipeline(common, input),
        Command::Plot { common, report } => cmd_plot(common, report)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
