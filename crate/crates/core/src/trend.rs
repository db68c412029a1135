//! Piecewise-linear seasonal trend.
//!
//! Local extrema anchor the breakpoints. Each segment is an independent OLS
//! line whose right endpoint is chosen among the observations around the
//! anchor as the one maximizing R².

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{day_to_date, TimeSeries};
use crate::stats::fit_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Maximum,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub time: f64,
    pub value: f64,
    pub kind: ExtremumKind,
}

/// Alternating local maxima and minima.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtremaSet {
    pub maxima: Vec<(f64, f64)>,
    pub minima: Vec<(f64, f64)>,
}

impl ExtremaSet {
    /// Maxima and minima merged in time order.
    pub fn ordered(&self) -> Vec<Extremum> {
        let mut all: Vec<Extremum> = self
            .maxima
            .iter()
            .map(|&(time, value)| Extremum {
                time,
                value,
                kind: ExtremumKind::Maximum,
            })
            .chain(self.minima.iter().map(|&(time, value)| Extremum {
                time,
                value,
                kind: ExtremumKind::Minimum,
            }))
            .collect();
        all.sort_by(|a, b| a.time.total_cmp(&b.time));
        all
    }

    pub fn len(&self) -> usize {
        self.maxima.len() + self.minima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Strict alternation in time, counts differing by at most one.
    pub fn alternates(&self) -> bool {
        let o = self.ordered();
        o.windows(2).all(|w| w[0].kind != w[1].kind) && self.maxima.len().abs_diff(self.minima.len()) <= 1
    }

    fn from_ordered(list: &[Extremum]) -> Self {
        let pick = |k| list.iter().filter(|e| e.kind == k).map(|e| (e.time, e.value)).collect();
        Self {
            maxima: pick(ExtremumKind::Maximum),
            minima: pick(ExtremumKind::Minimum),
        }
    }
}

/// Sliding-window extrema with alternation and minimum same-kind spacing.
///
/// A maximum is a point that is the (first) largest value within `±window`
/// days; minima likewise. Points closer than `window` to either end are not
/// candidates. Same-kind neighbours are merged (keeping the more extreme)
/// until the list alternates and same-kind extrema are at least
/// `min_separation` days apart.
pub fn find_extrema(s: &TimeSeries, min_separation: usize, window: usize) -> Result<ExtremaSet> {
    s.require_daily()?;
    if window < 1 || min_separation < window {
        return Err(Error::InvalidParameter(format!(
            "need min_separation >= window >= 1, got {min_separation} and {window}"
        )));
    }
    let x = s.values();
    let n = x.len();
    if n < 2 * window {
        return Err(Error::InsufficientData {
            required: 2 * window,
            available: n,
        });
    }

    let mut list = Vec::new();
    for i in window..n.saturating_sub(window) {
        let v = x[i];
        let before = &x[i - window..i];
        let after = &x[i + 1..=i + window];
        if before.iter().all(|&u| v > u) && after.iter().all(|&u| v >= u) {
            list.push(Extremum {
                time: s.times()[i],
                value: v,
                kind: ExtremumKind::Maximum,
            });
        } else if before.iter().all(|&u| v < u) && after.iter().all(|&u| v <= u) {
            list.push(Extremum {
                time: s.times()[i],
                value: v,
                kind: ExtremumKind::Minimum,
            });
        }
    }

    let sep = min_separation as f64;
    loop {
        if let Some(i) = (1..list.len()).find(|&i| list[i].kind == list[i - 1].kind) {
            let drop = weaker(&list[i - 1], &list[i], i - 1, i);
            list.remove(drop);
            continue;
        }
        let too_close = (2..list.len()).find(|&i| list[i].time - list[i - 2].time < sep);
        if let Some(i) = too_close {
            let drop = weaker(&list[i - 2], &list[i], i - 2, i);
            list.remove(drop);
            continue;
        }
        break;
    }

    Ok(ExtremaSet::from_ordered(&list))
}

/// Index of the less extreme of two same-kind extrema; ties drop the later.
fn weaker(a: &Extremum, b: &Extremum, ia: usize, ib: usize) -> usize {
    let a_stronger = match a.kind {
        ExtremumKind::Maximum => a.value >= b.value,
        ExtremumKind::Minimum => a.value <= b.value,
    };
    if a_stronger {
        ib
    } else {
        ia
    }
}

/// OLS line over the observations of one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_time: f64,
    pub end_time: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Constant values in the window; `r_squared` is reported as 0.
    #[serde(default)]
    pub degenerate: bool,
}

impl Segment {
    pub fn value_at(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

/// Least-squares line through the observations with `from <= t <= to`.
pub fn ols_fit(s: &TimeSeries, from: f64, to: f64) -> Result<Segment> {
    let lo = s.times().partition_point(|&t| t < from);
    let hi = s.times().partition_point(|&t| t <= to);
    ols_fit_indices(s, lo, hi)
}

fn ols_fit_indices(s: &TimeSeries, lo: usize, hi: usize) -> Result<Segment> {
    let count = hi.saturating_sub(lo);
    if count < 3 {
        return Err(Error::InsufficientData {
            required: 3,
            available: count,
        });
    }
    let t = &s.times()[lo..hi];
    let line =
        fit_line(t, &s.values()[lo..hi]).ok_or_else(|| Error::Degenerate("all observations share one time".into()))?;
    Ok(Segment {
        start_time: t[0],
        end_time: t[count - 1],
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        degenerate: line.degenerate,
    })
}

/// One candidate endpoint examined by [`refine_breakpoint`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Offset in observations relative to the anchor.
    pub offset: i64,
    pub end_time: f64,
    pub slope: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub chosen_end: f64,
    pub segment: Segment,
    pub candidates: Vec<Candidate>,
}

/// Index of the winning candidate: highest R², then closest to the anchor,
/// then earlier. Independent of input order.
pub fn select_best_candidate(candidates: &[(i64, f64)]) -> Option<usize> {
    (0..candidates.len()).reduce(|best, i| {
        let (ob, rb) = candidates[best];
        let (oi, ri) = candidates[i];
        let better = ri > rb || (ri == rb && (oi.abs() < ob.abs() || (oi.abs() == ob.abs() && oi < ob)));
        if better {
            i
        } else {
            best
        }
    })
}

/// Fit `[from, c]` for every observation `c` within `radius` observations of
/// `anchor` and keep the fit with the largest R².
pub fn refine_breakpoint(s: &TimeSeries, from: f64, anchor: f64, radius: usize) -> Result<Refinement> {
    let from_idx = s
        .index_of(from)
        .ok_or_else(|| Error::InvalidParameter(format!("start {from} is not an observation time")))?;
    let anchor_idx = s
        .index_of(anchor)
        .ok_or_else(|| Error::InvalidParameter(format!("anchor {anchor} is not an observation time")))?;

    let lo = anchor_idx.saturating_sub(radius).max(from_idx + 2);
    let hi = (anchor_idx + radius).min(s.len() - 1);
    if lo > hi {
        return Err(Error::InsufficientData {
            required: 3,
            available: anchor_idx.saturating_sub(from_idx) + 1,
        });
    }

    let mut candidates = Vec::with_capacity(hi - lo + 1);
    let mut segments = Vec::with_capacity(hi - lo + 1);
    for c in lo..=hi {
        let seg = ols_fit_indices(s, from_idx, c + 1)?;
        candidates.push(Candidate {
            offset: c as i64 - anchor_idx as i64,
            end_time: s.times()[c],
            slope: seg.slope,
            r_squared: seg.r_squared,
        });
        segments.push(seg);
    }
    let keyed: Vec<(i64, f64)> = candidates.iter().map(|c| (c.offset, c.r_squared)).collect();
    let best = select_best_candidate(&keyed).expect("non-empty candidate list");
    Ok(Refinement {
        chosen_end: candidates[best].end_time,
        segment: segments[best],
        candidates,
    })
}

/// Contiguous OLS segments; not forced continuous at the breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearTrend {
    pub segments: Vec<Segment>,
    /// Indices `i` where segments `i` and `i + 1` do not have opposite slopes.
    #[serde(default)]
    pub sign_violations: Vec<usize>,
}

impl PiecewiseLinearTrend {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter("trend needs at least one segment".into()));
        }
        for (i, w) in segments.windows(2).enumerate() {
            if w[0].end_time != w[1].start_time {
                return Err(Error::InvalidParameter(format!(
                    "segments {i} and {} are not contiguous",
                    i + 1
                )));
            }
        }
        if let Some(s) = segments.iter().find(|s| s.start_time >= s.end_time) {
            return Err(Error::InvalidParameter(format!(
                "segment [{}, {}] is empty",
                s.start_time, s.end_time
            )));
        }
        let sign_violations = segments
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].slope * w[1].slope >= 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            segments,
            sign_violations,
        })
    }

    /// θ₀ … θ_k.
    pub fn breakpoints(&self) -> Vec<f64> {
        std::iter::once(self.segments[0].start_time)
            .chain(self.segments.iter().map(|s| s.end_time))
            .collect()
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.segments[0].start_time,
            self.segments[self.segments.len() - 1].end_time,
        )
    }

    /// Jump `right(θ) - left(θ)` at each interior breakpoint.
    pub fn breakpoint_gaps(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .map(|w| w[1].value_at(w[0].end_time) - w[0].value_at(w[0].end_time))
            .collect()
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        let (start, end) = self.domain();
        if !(t >= start && t <= end) {
            return Err(Error::OutsideDomain { t, start, end });
        }
        let i = self.segments.partition_point(|s| s.end_time < t);
        Ok(self.segments[i].value_at(t))
    }

    pub fn to_records(&self, epoch: NaiveDate) -> Vec<TrendRecord> {
        self.segments
            .iter()
            .map(|s| TrendRecord {
                start_date: day_to_date(epoch, s.start_time),
                end_date: day_to_date(epoch, s.end_time),
                slope_per_day: s.slope,
                intercept: s.intercept,
                r_squared: s.r_squared,
            })
            .collect()
    }
}

/// One row of the trend JSON. `intercept` is the line value at day 0 of the
/// series epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRecord {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub slope_per_day: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn evaluate_trend(tr: &PiecewiseLinearTrend, t: f64) -> Result<f64> {
    tr.evaluate(t)
}

/// Build the trend from the first observation through each extremum (after
/// refinement) to the last observation.
pub fn fit_trend(s: &TimeSeries, extrema: &ExtremaSet, radius: usize) -> Result<PiecewiseLinearTrend> {
    let ordered = extrema.ordered();
    if ordered.windows(2).any(|w| w[0].kind == w[1].kind) {
        return Err(Error::InvalidParameter("extrema do not alternate".into()));
    }
    let mut segments = Vec::with_capacity(ordered.len() + 1);
    let mut from = s.first_time();
    for e in &ordered {
        let r = refine_breakpoint(s, from, e.time, radius)?;
        from = r.chosen_end;
        segments.push(r.segment);
    }
    segments.push(ols_fit(s, from, s.last_time())?);
    PiecewiseLinearTrend::new(segments)
}

/// Values minus the trend at every observation time.
pub fn detrend(s: &TimeSeries, tr: &PiecewiseLinearTrend) -> Result<TimeSeries> {
    let values = s
        .times()
        .iter()
        .zip(s.values())
        .map(|(&t, &v)| tr.evaluate(t).map(|r| v - r))
        .collect::<Result<Vec<_>>>()?;
    s.with_values(values)
}

/// Breakpoint table with rising and falling segments side by side.
pub fn write_breakpoints_csv<W: Write>(out: W, tr: &PiecewiseLinearTrend, epoch: NaiveDate) -> Result<()> {
    let mut rows: Vec<[String; 6]> = Vec::new();
    for s in &tr.segments {
        let cells = [
            day_to_date(epoch, s.end_time).format("%m/%d/%Y").to_string(),
            format!("{:.4}", s.slope),
            format!("{:.4}", s.r_squared),
        ];
        let rising = s.slope > 0.0;
        match rows.last_mut() {
            Some(row) if !rising && row[3].is_empty() => {
                row[3..].clone_from_slice(&cells);
            }
            _ if rising => rows.push([
                cells[0].clone(),
                cells[1].clone(),
                cells[2].clone(),
                String::new(),
                String::new(),
                String::new(),
            ]),
            _ => rows.push([
                String::new(),
                String::new(),
                String::new(),
                cells[0].clone(),
                cells[1].clone(),
                cells[2].clone(),
            ]),
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse {
        row: 0,
        message: e.to_string(),
    };
    w.write_record([
        "theta_rise",
        "slope_rise",
        "r2_rise",
        "theta_fall",
        "slope_fall",
        "r2_fall",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
