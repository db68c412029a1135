//! Simulation protocols built on the single tests: repeated Shapiro-Wilk and
//! RJB tests on residuals `z = X_w - r_w - B_sim` over fresh fBm draws, and
//! the DMA test swept over windows on contiguous subsets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dma::{dma_test_values, CovarianceMode, DmaConfig, DMA_REJECT_LEVEL};
use super::rjb::{RjbConstants, RjbNull};
use super::shapiro::{sw_coefficients, with_coefficients, SW_ACCEPT_THRESHOLD};
use super::Decision;
use crate::error::{Error, Result};
use crate::fbm::{FbmGenerator, FbmParams};
use crate::rng;
use crate::series::TimeSeries;
use crate::trend::PiecewiseLinearTrend;

pub const RJB_DEFAULT_ITERATIONS: usize = 10_000;
const SW_HISTOGRAM_BINS: usize = 20;

/// Weekly residual `X_w - r_w` and a generator for the subtracted fBm path.
///
/// The simulated path has the length of the weekly sample. With
/// `time_step = 1` it is drawn on a unit grid; other steps rescale it by
/// `time_step^H` (self-similarity).
#[derive(Debug)]
pub struct ResidualSimulation {
    base: Vec<f64>,
    params: FbmParams,
    time_step: f64,
    scale: f64,
    generator: FbmGenerator,
}

impl ResidualSimulation {
    pub fn new(x_weekly: &TimeSeries, trend: &PiecewiseLinearTrend, params: FbmParams, time_step: f64) -> Result<Self> {
        if !(time_step > 0.0 && time_step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {time_step}"
            )));
        }
        let base = x_weekly
            .times()
            .iter()
            .zip(x_weekly.values())
            .map(|(&t, &v)| trend.evaluate(t).map(|r| v - r))
            .collect::<Result<Vec<_>>>()?;
        Self::from_base(base, params, time_step)
    }

    pub fn from_base(base: Vec<f64>, params: FbmParams, time_step: f64) -> Result<Self> {
        let generator = FbmGenerator::new(params, base.len())?;
        Ok(Self {
            scale: time_step.powf(params.hurst),
            base,
            params,
            time_step,
            generator,
        })
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn params(&self) -> FbmParams {
        self.params
    }

    pub fn time_step(&self) -> f64 {
        self.time_step
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Residuals of replicate `index` under `seed`.
    pub fn residuals_into(&self, seed: u64, index: u64, out: &mut [f64]) {
        self.generator.sample_into(&mut rng::stream(seed, index), out);
        for (o, b) in out.iter_mut().zip(&self.base) {
            *o = b - self.scale * *o;
        }
    }

    pub fn residuals(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.residuals_into(seed, index, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    if width > 0.0 {
        for &v in values {
            let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
    } else {
        counts[bins - 1] = values.len();
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lower: lo + k as f64 * width,
            upper: lo + (k + 1) as f64 * width,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwSummary {
    pub n_sims: usize,
    pub seed: u64,
    pub sample_size: usize,
    pub time_step: f64,
    pub threshold: f64,
    pub pass_fraction: f64,
    pub w_values: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
    /// Cumulative fraction at each bin's upper edge.
    pub cumulative: Vec<f64>,
}

impl SwSummary {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<sw histogram>", e);
        writeln!(out, "lower,upper,count,cumulative").map_err(io)?;
        for (b, c) in self.histogram.iter().zip(&self.cumulative) {
            writeln!(out, "{:.6},{:.6},{},{:.6}", b.lower, b.upper, b.count, c).map_err(io)?;
        }
        Ok(())
    }
}

/// Shapiro-Wilk on `n_sims` residual replicates (unit-grid simulation).
pub fn sw_simulation_protocol(
    x_weekly: &TimeSeries,
    trend: &PiecewiseLinearTrend,
    params: FbmParams,
    n_sims: usize,
    seed: u64,
) -> Result<SwSummary> {
    let sim = ResidualSimulation::new(x_weekly, trend, params, 1.0)?;
    sw_simulation_protocol_with(&sim, n_sims, seed)
}

pub fn sw_simulation_protocol_with(sim: &ResidualSimulation, n_sims: usize, seed: u64) -> Result<SwSummary> {
    if n_sims == 0 {
        return Err(Error::InvalidParameter("n_sims must be positive".into()));
    }
    let a = sw_coefficients(sim.len())?;
    let w_values = (0..n_sims as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; sim.len()],
            |buf, i| {
                sim.residuals_into(seed, i, buf);
                buf.sort_by(f64::total_cmp);
                if buf[buf.len() - 1] - buf[0] <= 0.0 {
                    return Err(Error::Degenerate("constant residual sample".into()));
                }
                Ok(with_coefficients(buf, &a).w)
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    let pass = w_values.iter().filter(|&&w| w >= SW_ACCEPT_THRESHOLD).count();
    let lo = w_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let lo = lo.min(SW_ACCEPT_THRESHOLD - 0.05);
    let histogram = histogram(&w_values, lo, 1.0, SW_HISTOGRAM_BINS);
    let mut acc = 0;
    let cumulative = histogram
        .iter()
        .map(|b| {
            acc += b.count;
            acc as f64 / n_sims as f64
        })
        .collect();
    Ok(SwSummary {
        n_sims,
        seed,
        sample_size: sim.len(),
        time_step: sim.time_step(),
        threshold: SW_ACCEPT_THRESHOLD,
        pass_fraction: pass as f64 / n_sims as f64,
        w_values,
        histogram,
        cumulative,
    })
}

/// Acceptance over `blocks` repetitions of `n` RJB-tested replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RjbBlockResult {
    pub n: usize,
    pub alpha: f64,
    pub iterations: usize,
    pub accepted: Vec<usize>,
    /// Percentage of replicates with `p > alpha`, per block.
    pub percentages: Vec<f64>,
}

/// RJB block protocol with a cached `k = 10^4` null and unit-grid simulation.
pub fn rjb_block_protocol(
    x_weekly: &TimeSeries,
    trend: &PiecewiseLinearTrend,
    params: FbmParams,
    n: usize,
    blocks: usize,
    alpha: f64,
    seed: u64,
) -> Result<RjbBlockResult> {
    let sim = ResidualSimulation::new(x_weekly, trend, params, 1.0)?;
    rjb_block_protocol_with(&sim, n, blocks, alpha, RJB_DEFAULT_ITERATIONS, seed)
}

pub fn rjb_block_protocol_with(
    sim: &ResidualSimulation,
    n: usize,
    blocks: usize,
    alpha: f64,
    iterations: usize,
    seed: u64,
) -> Result<RjbBlockResult> {
    if blocks == 0 || n == 0 {
        return Err(Error::InvalidParameter("blocks and n must be positive".into()));
    }
    let null = RjbNull::cached(
        sim.len(),
        iterations,
        rng::derive_seed(seed, "rjb_null"),
        RjbConstants::MonteCarlo,
    )?;
    let mut accepted = Vec::with_capacity(blocks);
    for b in 0..blocks as u64 {
        let block_seed = rng::derive_seed_index(seed, b);
        let decisions = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let z = sim.residuals(block_seed, i);
                null.test(&z, alpha).map(|r| r.decision == Decision::Accept)
            })
            .collect::<Result<Vec<bool>>>()?;
        accepted.push(decisions.into_iter().filter(|&a| a).count());
    }
    Ok(RjbBlockResult {
        n,
        alpha,
        iterations,
        percentages: accepted.iter().map(|&a| 100.0 * a as f64 / n as f64).collect(),
        accepted,
    })
}

/// Blocks as rows, one column per `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RjbTable {
    pub columns: Vec<RjbBlockResult>,
}

impl RjbTable {
    pub fn blocks(&self) -> usize {
        self.columns.first().map_or(0, |c| c.percentages.len())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<rjb table>", e);
        let header: Vec<String> = self.columns.iter().map(|c| format!("n={}", c.n)).collect();
        writeln!(out, "block,{}", header.join(",")).map_err(io)?;
        for h in 0..self.blocks() {
            let cells: Vec<String> = self
                .columns
                .iter()
                .map(|c| format!("{:.1}", c.percentages[h]))
                .collect();
            writeln!(out, "{},{}", h + 1, cells.join(",")).map_err(io)?;
        }
        Ok(())
    }
}

/// One block protocol per entry of `ns`, each with its own derived seed.
pub fn rjb_table(
    sim: &ResidualSimulation,
    ns: &[usize],
    blocks: usize,
    alpha: f64,
    iterations: usize,
    seed: u64,
) -> Result<RjbTable> {
    let columns = ns
        .iter()
        .map(|&n| {
            rjb_block_protocol_with(
                sim,
                n,
                blocks,
                alpha,
                iterations,
                rng::derive_seed_index(seed, n as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RjbTable { columns })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmaProtocolConfig {
    pub chi_square_samples: usize,
    pub covariance_mode: CovarianceMode,
    pub alpha: f64,
}

impl Default for DmaProtocolConfig {
    fn default() -> Self {
        Self {
            chi_square_samples: 1000,
            covariance_mode: CovarianceMode::Detrended,
            alpha: DMA_REJECT_LEVEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaSubsetRow {
    pub subset: usize,
    pub start_index: usize,
    pub length: usize,
    pub reject: usize,
    pub warning: usize,
    pub accept: usize,
}

impl DmaSubsetRow {
    pub fn total(&self) -> usize {
        self.reject + self.warning + self.accept
    }

    /// `(reject, warning, accept)` in percent.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let t = self.total().max(1) as f64;
        (
            100.0 * self.reject as f64 / t,
            100.0 * self.warning as f64 / t,
            100.0 * self.accept as f64 / t,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmaPValue {
    pub subset: usize,
    pub m: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaProtocolSummary {
    pub config: DmaProtocolConfig,
    pub seed: u64,
    pub rows: Vec<DmaSubsetRow>,
    pub p_values: Vec<DmaPValue>,
    pub overall_accept_fraction: f64,
}

impl DmaProtocolSummary {
    pub fn write_table_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<dma table>", e);
        writeln!(
            out,
            "subset,start_index,length,reject,warning,accept,reject_pct,warning_pct,accept_pct"
        )
        .map_err(io)?;
        for r in &self.rows {
            let (a, b, c) = r.percentages();
            writeln!(
                out,
                "{},{},{},{},{},{},{:.2},{:.2},{:.2}",
                r.subset, r.start_index, r.length, r.reject, r.warning, r.accept, a, b, c
            )
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn write_pvalues_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<dma p-values>", e);
        writeln!(out, "subset,m,p").map_err(io)?;
        for v in &self.p_values {
            writeln!(out, "{},{},{:.4}", v.subset, v.m, v.p).map_err(io)?;
        }
        Ok(())
    }
}

/// `[start, end)` index ranges of `subsets` contiguous blocks; the last one
/// absorbs the remainder.
pub fn subset_bounds(n: usize, subsets: usize) -> Vec<(usize, usize)> {
    let len = n / subsets;
    (0..subsets)
        .map(|k| (k * len, if k + 1 == subsets { n } else { (k + 1) * len }))
        .collect()
}

/// DMA test on every subset for every window `m = 2..=length-2`.
pub fn dma_subset_protocol(
    b: &TimeSeries,
    params: &FbmParams,
    subsets: usize,
    cfg: &DmaProtocolConfig,
    seed: u64,
) -> Result<DmaProtocolSummary> {
    b.require_daily()?;
    if subsets == 0 {
        return Err(Error::InvalidParameter("subsets must be positive".into()));
    }
    if b.len() < 20 * subsets {
        return Err(Error::InsufficientData {
            required: 20 * subsets,
            available: b.len(),
        });
    }
    let mut rows = Vec::with_capacity(subsets);
    let mut p_values = Vec::new();
    for (k, (start, end)) in subset_bounds(b.len(), subsets).into_iter().enumerate() {
        let x = &b.values()[start..end];
        let subset = k + 1;
        let reports = (2..=x.len() - 2)
            .into_par_iter()
            .map(|m| {
                let dc = DmaConfig {
                    window: m,
                    chi_square_samples: cfg.chi_square_samples,
                    covariance_mode: cfg.covariance_mode,
                };
                let s = rng::derive_seed_index(rng::derive_seed_index(seed, subset as u64), m as u64);
                dma_test_values(x, params, &dc, cfg.alpha, s).map(|r| (m, r))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut row = DmaSubsetRow {
            subset,
            start_index: start,
            length: x.len(),
            reject: 0,
            warning: 0,
            accept: 0,
        };
        for (m, r) in reports {
            match r.decision {
                Decision::Reject => row.reject += 1,
                Decision::Warning => row.warning += 1,
                Decision::Accept => row.accept += 1,
            }
            p_values.push(DmaPValue {
                subset,
                m,
                p: r.p_value.unwrap_or(f64::NAN),
            });
        }
        rows.push(row);
    }
    let total: usize = rows.iter().map(DmaSubsetRow::total).sum();
    let accepted: usize = rows.iter().map(|r| r.accept).sum();
    Ok(DmaProtocolSummary {
        config: *cfg,
        seed,
        rows,
        p_values,
        overall_accept_fraction: accepted as f64 / total.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trend::{PiecewiseLinearTrend, Segment};

    fn flat_trend(end: f64) -> PiecewiseLinearTrend {
        PiecewiseLinearTrend::new(vec![Segment {
            start_time: 0.0,
            end_time: end,
            slope: 0.0,
            intercept: 0.0,
            r_squared: 1.0,
            degenerate: false,
        }])
        .unwrap()
    }

    fn weekly_fbm(params: FbmParams, m: usize, seed: u64) -> TimeSeries {
        let x = FbmGenerator::new(params, m).unwrap().sample(&mut rng::stream(seed, 0));
        let times = (0..m).map(|k| 7.0 * k as f64).collect();
        TimeSeries::new(times, x, crate::series::DEFAULT_EPOCH).unwrap()
    }

    #[test]
    fn table5_row_percentages() {
        let row = DmaSubsetRow {
            subset: 1,
            start_index: 0,
            length: 250,
            reject: 0,
            warning: 12,
            accept: 235,
        };
        let (r, w, a) = row.percentages();
        assert_eq!(r, 0.0);
        assert!((w - 4.86).abs() < 0.005);
        assert!((a - 95.14).abs() < 0.005);
    }

    #[test]
    fn subset_split_absorbs_remainder() {
        assert_eq!(subset_bounds(2348, 10)[9], (2106, 2348));
        assert_eq!(subset_bounds(2348, 10)[0], (0, 234));
        assert_eq!(subset_bounds(30, 1), vec![(0, 30)]);
    }

    #[test]
    fn single_subset_window_count() {
        let p = FbmParams::wiener();
        let x = FbmGenerator::new(p, 30).unwrap().sample(&mut rng::stream(1, 0));
        let s = TimeSeries::from_values(x).unwrap();
        let summary = dma_subset_protocol(&s, &p, 1, &DmaProtocolConfig::default(), 5).unwrap();
        assert_eq!(summary.p_values.len(), 27);
        assert_eq!(summary.p_values.first().unwrap().m, 2);
        assert_eq!(summary.p_values.last().unwrap().m, 28);
        assert_eq!(summary.rows[0].total(), 27);
        assert!(dma_subset_protocol(&s, &p, 2, &DmaProtocolConfig::default(), 5).is_err());
    }

    #[test]
    fn single_replicate_summary() {
        let p = FbmParams::new(0.427, 0.0846).unwrap();
        let xw = weekly_fbm(p, 335, 3);
        let tr = flat_trend(xw.last_time());
        let s = sw_simulation_protocol(&xw, &tr, p, 1, 9).unwrap();
        assert_eq!(s.w_values.len(), 1);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<usize>(), 1);
        assert_eq!(*s.cumulative.last().unwrap(), 1.0);
    }

    #[test]
    fn outlier_collapses_sw_fraction() {
        let p = FbmParams::new(0.427, 0.0846).unwrap();
        let xw = weekly_fbm(p, 335, 4);
        let tr = flat_trend(xw.last_time());
        let mut v = xw.values().to_vec();
        v[100] += 100.0;
        let spiked = xw.with_values(v).unwrap();
        let s = sw_simulation_protocol(&spiked, &tr, p, 200, 1).unwrap();
        assert!(s.pass_fraction < 0.5, "{}", s.pass_fraction);
    }

    #[test]
    fn residuals_subtract_scaled_path() {
        let p = FbmParams::new(0.3, 1.0).unwrap();
        let base: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let unit = ResidualSimulation::from_base(base.clone(), p, 1.0).unwrap();
        let weekly = ResidualSimulation::from_base(base.clone(), p, 7.0).unwrap();
        let a = unit.residuals(3, 2);
        let b = weekly.residuals(3, 2);
        let k = 7f64.powf(0.3);
        for i in 0..50 {
            assert!(((base[i] - b[i]) - k * (base[i] - a[i])).abs() < 1e-9);
        }
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn rjb_trivial_blocks() {
        let p = FbmParams::new(0.427, 0.0846).unwrap();
        let xw = weekly_fbm(p, 100, 5);
        let tr = flat_trend(xw.last_time());
        let sim = ResidualSimulation::new(&xw, &tr, p, 1.0).unwrap();
        let one = rjb_block_protocol_with(&sim, 1, 1, 0.02, 1000, 3).unwrap();
        assert_eq!(one.percentages.len(), 1);
        assert!(one.percentages[0] == 0.0 || one.percentages[0] == 100.0);
        let all = rjb_block_protocol_with(&sim, 20, 3, 1.0, 1000, 3).unwrap();
        assert!(all.percentages.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rjb_table_shape() {
        let p = FbmParams::new(0.427, 0.0846).unwrap();
        let xw = weekly_fbm(p, 60, 6);
        let tr = flat_trend(xw.last_time());
        let sim = ResidualSimulation::new(&xw, &tr, p, 1.0).unwrap();
        let t = rjb_table(&sim, &[10, 20], 4, 0.02, 1000, 1).unwrap();
        assert_eq!(t.blocks(), 4);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("block,n=10,n=20\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 0.0, 1.0, 4);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 0, 1, 2]);
    }
}
