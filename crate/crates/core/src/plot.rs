//! Static SVG figures rendered from a run report. Output depends only on the
//! report, so identical reports give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hypothesis::protocols::histogram;
use crate::hypothesis::SW_ACCEPT_THRESHOLD;
use crate::pipeline::RunReport;
use crate::stats::{mean, quantile_sorted, sample_variance};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const POINT: &str = "#1f5fa8";
const LINE: &str = "#c0392b";
const MUTED: &str = "#7f8c8d";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutput {
    pub files: Vec<String>,
    /// One notice per figure that could not be drawn.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64), left: f64, top: f64, width: f64, height: f64) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Self {
            x: pad(x),
            y: pad(y),
            left,
            top,
            width,
            height,
        }
    }

    fn full(x: (f64, f64), y: (f64, f64)) -> Self {
        Self::new(x, y, 70.0, 40.0, WIDTH - 100.0, HEIGHT - 100.0)
    }

    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    Linear,
    /// Data are already `log10` values; ticks are labelled as powers of ten.
    Log10,
}

fn range(v: impl IntoIterator<Item = f64>) -> (f64, f64) {
    v.into_iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

fn widen((a, b): (f64, f64), frac: f64) -> (f64, f64) {
    let d = (b - a).abs().max(1e-12) * frac;
    (a - d, b + d)
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.0 {
        2.0
    } else if r < 7.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn ticks(lo: f64, hi: f64, scale: Scale) -> Vec<(f64, String)> {
    let step = match scale {
        Scale::Linear => nice_step(hi - lo, 5),
        Scale::Log10 => nice_step(hi - lo, 5).max(1.0).round(),
    };
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10()).ceil() as usize
    };
    let mut out = Vec::new();
    let mut k = (lo / step).ceil() as i64;
    while (k as f64) * step <= hi + 1e-9 * step {
        let v = k as f64 * step;
        let label = match scale {
            Scale::Linear => format!("{:.*}", decimals, if v.abs() < 1e-12 * step { 0.0 } else { v }),
            Scale::Log10 => format!("1e{}", v.round() as i64),
        };
        out.push((v, label));
        k += 1;
    }
    out
}

struct Svg {
    body: String,
}

impl Svg {
    fn new() -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(body, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
        Self { body }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{}</text>",
            escape(s)
        );
    }

    fn axes(&mut self, f: &Frame, title: &str, xlabel: &str, ylabel: &str, xs: Scale, ys: Scale) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>",
            f.left, f.top, f.width, f.height
        );
        for (v, label) in ticks(f.x.0, f.x.1, xs) {
            let x = f.px(v);
            let y = f.top + f.height;
            self.line(x, y, x, y + 5.0, "black", 1.0);
            self.text(x, y + 18.0, "middle", &label);
        }
        for (v, label) in ticks(f.y.0, f.y.1, ys) {
            let y = f.py(v);
            self.line(f.left - 5.0, y, f.left, y, "black", 1.0);
            self.text(f.left - 8.0, y + 4.0, "end", &label);
        }
        self.text(f.left + f.width / 2.0, f.top - 12.0, "middle", title);
        self.text(f.left + f.width / 2.0, f.top + f.height + 36.0, "middle", xlabel);
        let (cx, cy) = (f.left - 52.0, f.top + f.height / 2.0);
        let _ = writeln!(
            self.body,
            "<text x=\"{cx:.1}\" y=\"{cy:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 {cx:.1} {cy:.1})\">{}</text>",
            escape(ylabel)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, color: &str, width: f64) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{color}\" stroke-width=\"{width}\"/>"
        );
    }

    fn data_line(&mut self, f: &Frame, a: (f64, f64), b: (f64, f64), color: &str, dashed: bool) {
        let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            self.body,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
            f.px(a.0),
            f.py(a.1),
            f.px(b.0),
            f.py(b.1)
        );
    }

    fn polyline(&mut self, f: &Frame, xs: &[f64], ys: &[f64], color: &str, width: f64) {
        let mut pts = String::new();
        for (x, y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", f.px(*x), f.py(*y));
            }
        }
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>",
            pts.trim_end()
        );
    }

    fn points(&mut self, f: &Frame, xs: &[f64], ys: &[f64], color: &str) {
        let _ = writeln!(self.body, "<g fill=\"{color}\">");
        for (x, y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    self.body,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\"/>",
                    f.px(*x),
                    f.py(*y)
                );
            }
        }
        let _ = writeln!(self.body, "</g>");
    }

    fn bar(&mut self, f: &Frame, x0: f64, x1: f64, y: f64, color: &str) {
        let (l, r) = (f.px(x0), f.px(x1));
        let (t, b) = (f.py(y), f.py(f.y.0.max(0.0)));
        let _ = writeln!(
            self.body,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" stroke=\"white\" stroke-width=\"0.5\"/>",
            l,
            t.min(b),
            (r - l).max(0.0),
            (b - t).abs()
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn scatter_trend(r: &RunReport) -> Option<String> {
    let s = r.series.as_ref()?;
    let t = r.trend.as_ref()?;
    let yr = widen(range(s.values().iter().copied()), 0.05);
    let f = Frame::full(range(s.times().iter().copied()), yr);
    let mut svg = Svg::new();
    let label = format!("days since {}", s.epoch());
    svg.axes(
        &f,
        "Series and piecewise-linear trend",
        &label,
        "value",
        Scale::Linear,
        Scale::Linear,
    );
    svg.points(&f, s.times(), s.values(), POINT);
    for seg in &t.trend.segments {
        let a = (seg.start_time, seg.value_at(seg.start_time));
        let b = (seg.end_time, seg.value_at(seg.end_time));
        svg.data_line(&f, a, b, LINE, false);
    }
    Some(svg.finish())
}

fn detrended(r: &RunReport) -> Option<String> {
    let b = r.residuals.as_ref()?;
    let f = Frame::full(
        range(b.times().iter().copied()),
        widen(range(b.values().iter().copied()), 0.05),
    );
    let mut svg = Svg::new();
    let label = format!("days since {}", b.epoch());
    svg.axes(
        &f,
        "Detrended series X - r",
        &label,
        "value",
        Scale::Linear,
        Scale::Linear,
    );
    svg.data_line(&f, (f.x.0, 0.0), (f.x.1, 0.0), MUTED, true);
    svg.polyline(&f, b.times(), b.values(), POINT, 1.0);
    Some(svg.finish())
}

fn residual_distribution(r: &RunReport) -> Option<String> {
    let b = r.residuals.as_ref()?;
    let v = b.values();
    let mu = mean(v);
    let sd = sample_variance(v).sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let norm = Normal::new(0.0, 1.0).expect("standard normal");
    let mut svg = Svg::new();
    let half = (WIDTH - 150.0) / 2.0;

    let (lo, hi) = range(v.iter().copied());
    let bins = histogram(v, lo, hi, 30);
    let width = bins[0].upper - bins[0].lower;
    let n = v.len() as f64;
    let dens: Vec<f64> = bins.iter().map(|h| h.count as f64 / (n * width.max(1e-300))).collect();
    let peak = dens
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt()));
    let f1 = Frame::new((lo, hi), (0.0, peak * 1.05), 70.0, 40.0, half, HEIGHT - 100.0);
    svg.axes(
        &f1,
        "Histogram with normal density",
        "value",
        "density",
        Scale::Linear,
        Scale::Linear,
    );
    for (h, d) in bins.iter().zip(&dens) {
        svg.bar(&f1, h.lower, h.upper, *d, POINT);
    }
    let xs: Vec<f64> = (0..=100).map(|k| lo + (hi - lo) * k as f64 / 100.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| (-0.5 * ((x - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
        .collect();
    svg.polyline(&f1, &xs, &ys, LINE, 1.5);

    let mut z: Vec<f64> = v.iter().map(|x| (x - mu) / sd).collect();
    z.sort_by(f64::total_cmp);
    let q: Vec<f64> = (1..=z.len())
        .map(|i| norm.inverse_cdf((i as f64 - 0.5) / z.len() as f64))
        .collect();
    let lim = widen(range(z.iter().chain(&q).copied()), 0.05);
    let f2 = Frame::new(lim, lim, 70.0 + half + 80.0, 40.0, half, HEIGHT - 100.0);
    svg.axes(
        &f2,
        "Normal Q-Q",
        "normal quantile",
        "standardized value",
        Scale::Linear,
        Scale::Linear,
    );
    svg.data_line(&f2, (lim.0, lim.0), (lim.1, lim.1), LINE, true);
    svg.points(&f2, &q, &z, POINT);
    Some(svg.finish())
}

fn periodogram_linear(r: &RunReport) -> Option<String> {
    let p = r.periodogram.as_ref()?;
    let f = Frame::full(
        range(p.frequencies.iter().copied()),
        widen((0.0, range(p.power.iter().copied()).1), 0.02),
    );
    let mut svg = Svg::new();
    let title = format!("Welch periodogram ({} window, L = {})", p.window_name, p.segment_length);
    svg.axes(
        &f,
        &title,
        "frequency (cycles/day)",
        "power",
        Scale::Linear,
        Scale::Linear,
    );
    svg.polyline(&f, &p.frequencies, &p.power, POINT, 1.0);
    Some(svg.finish())
}

fn periodogram_loglog(r: &RunReport) -> Option<String> {
    let p = r.periodogram.as_ref()?;
    let fit = r.spectral.as_ref()?;
    let (lx, ly): (Vec<f64>, Vec<f64>) = p
        .frequencies
        .iter()
        .zip(&p.power)
        .filter(|(f, s)| **f > 0.0 && **s > 0.0)
        .map(|(f, s)| (f.log10(), s.log10()))
        .unzip();
    let f = Frame::full(
        widen(range(lx.iter().copied()), 0.02),
        widen(range(ly.iter().copied()), 0.05),
    );
    let mut svg = Svg::new();
    let title = match fit.hurst {
        Some(h) => format!(
            "Log-log periodogram: beta = {:.3}, {} H = {:.3}",
            fit.beta, fit.classification, h
        ),
        None => format!("Log-log periodogram: beta = {:.3}, {}", fit.beta, fit.classification),
    };
    svg.axes(
        &f,
        &title,
        "frequency (cycles/day)",
        "power",
        Scale::Log10,
        Scale::Log10,
    );
    svg.points(&f, &lx, &ly, POINT);
    // ln S = a - beta ln f  <=>  log10 S = a / ln 10 - beta log10 f
    let lo = fit.band.0.max(10f64.powf(f.x.0));
    let hi = fit.band.1.min(10f64.powf(f.x.1));
    if hi > lo {
        let y = |x: f64| fit.log_intercept / std::f64::consts::LN_10 - fit.beta * x;
        let (a, b) = (lo.log10(), hi.log10());
        svg.data_line(&f, (a, y(a)), (b, y(b)), LINE, false);
    }
    Some(svg.finish())
}

fn sw_histogram(r: &RunReport) -> Option<String> {
    let sw = r.shapiro_wilk.as_ref()?;
    let bins = &sw.histogram;
    let (lo, hi) = (bins.first()?.lower, bins.last()?.upper);
    let peak = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let half = (WIDTH - 150.0) / 2.0;
    let mut svg = Svg::new();
    let f1 = Frame::new((lo, hi), (0.0, peak * 1.05), 70.0, 40.0, half, HEIGHT - 100.0);
    let title = format!("W over {} simulations", sw.n_sims);
    svg.axes(&f1, &title, "W", "count", Scale::Linear, Scale::Linear);
    for b in bins {
        svg.bar(&f1, b.lower, b.upper, b.count as f64, POINT);
    }
    svg.data_line(
        &f1,
        (SW_ACCEPT_THRESHOLD, 0.0),
        (SW_ACCEPT_THRESHOLD, peak * 1.05),
        LINE,
        true,
    );

    let f2 = Frame::new((lo, hi), (0.0, 1.0), 70.0 + half + 80.0, 40.0, half, HEIGHT - 100.0);
    let title = format!(
        "Cumulative; fraction W >= {} is {:.3}",
        SW_ACCEPT_THRESHOLD, sw.pass_fraction
    );
    svg.axes(&f2, &title, "W", "cumulative fraction", Scale::Linear, Scale::Linear);
    let mut xs = vec![lo];
    let mut ys = vec![0.0];
    for (b, c) in bins.iter().zip(&sw.cumulative) {
        xs.extend([b.lower, b.upper]);
        ys.extend([*c, *c]);
    }
    svg.polyline(&f2, &xs, &ys, POINT, 1.5);
    svg.data_line(&f2, (SW_ACCEPT_THRESHOLD, 0.0), (SW_ACCEPT_THRESHOLD, 1.0), LINE, true);
    Some(svg.finish())
}

fn dma_boxes(r: &RunReport) -> Option<String> {
    let d = r.dma.as_ref()?;
    let k = d.rows.len();
    if k == 0 {
        return None;
    }
    let f = Frame::full((0.5, k as f64 + 0.5), (0.0, 1.0));
    let mut svg = Svg::new();
    let title = format!(
        "DMA p-values per subset (overall accept {:.1}%)",
        100.0 * d.overall_accept_fraction
    );
    svg.axes(&f, &title, "subset", "p", Scale::Linear, Scale::Linear);
    for level in [d.config.alpha, 0.05] {
        svg.data_line(&f, (f.x.0, level), (f.x.1, level), LINE, true);
    }
    for row in &d.rows {
        let mut p: Vec<f64> = d
            .p_values
            .iter()
            .filter(|v| v.subset == row.subset && v.p.is_finite())
            .map(|v| v.p)
            .collect();
        if p.is_empty() {
            continue;
        }
        p.sort_by(f64::total_cmp);
        let x = row.subset as f64;
        let (q1, med, q3) = (
            quantile_sorted(&p, 0.25),
            quantile_sorted(&p, 0.5),
            quantile_sorted(&p, 0.75),
        );
        let (lo, hi) = (p[0], p[p.len() - 1]);
        svg.data_line(&f, (x, lo), (x, q1), MUTED, false);
        svg.data_line(&f, (x, q3), (x, hi), MUTED, false);
        let _ = writeln!(
            svg.body,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#d6e4f0\" stroke=\"{POINT}\"/>",
            f.px(x - 0.3),
            f.py(q3),
            f.px(x + 0.3) - f.px(x - 0.3),
            f.py(q1) - f.py(q3)
        );
        svg.data_line(&f, (x - 0.3, med), (x + 0.3, med), POINT, false);
    }
    Some(svg.finish())
}

type Renderer = fn(&RunReport) -> Option<String>;

const FIGURES: [(&str, Renderer, &str); 7] = [
    ("scatter_trend.svg", scatter_trend, "series or trend"),
    ("detrended.svg", detrended, "residuals"),
    (
        "residual_distribution.svg",
        residual_distribution,
        "non-constant residuals",
    ),
    ("periodogram.svg", periodogram_linear, "periodogram"),
    (
        "periodogram_loglog.svg",
        periodogram_loglog,
        "periodogram or spectral fit",
    ),
    ("sw_histogram.svg", sw_histogram, "Shapiro-Wilk protocol"),
    ("dma_pvalues.svg", dma_boxes, "DMA protocol"),
];

/// Every figure the report has data for, as `(file name, svg)`.
pub fn render_plots(report: &RunReport) -> (Vec<(String, String)>, Vec<String>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (name, render, needs) in FIGURES {
        match render(report) {
            Some(svg) => out.push((name.to_string(), svg)),
            None => skipped.push(format!("{name} skipped: report has no {needs}")),
        }
    }
    (out, skipped)
}

pub fn emit_plots(report: &RunReport, dir: &Path) -> Result<PlotOutput> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (figs, skipped) = render_plots(report);
    let mut files = Vec::with_capacity(figs.len());
    for (name, svg) in figs {
        let path = dir.join(&name);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        files.push(name);
    }
    Ok(PlotOutput { files, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_values() {
        let t = ticks(0.0, 10.0, Scale::Linear);
        assert_eq!(
            t.iter().map(|x| x.1.as_str()).collect::<Vec<_>>(),
            ["0", "2", "4", "6", "8", "10"]
        );
        let t = ticks(-3.2, -0.1, Scale::Log10);
        assert_eq!(
            t.iter().map(|x| x.1.as_str()).collect::<Vec<_>>(),
            ["1e-3", "1e-2", "1e-1"]
        );
        let t = ticks(0.0, 0.1, Scale::Linear);
        assert_eq!(t[1].1, "0.02");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & c>d"), "a&lt;b &amp; c&gt;d");
    }

    #[test]
    fn frame_maps_corners() {
        let f = Frame::new((0.0, 10.0), (-1.0, 1.0), 10.0, 20.0, 100.0, 50.0);
        assert_eq!(f.px(0.0), 10.0);
        assert_eq!(f.px(10.0), 110.0);
        assert_eq!(f.py(-1.0), 70.0);
        assert_eq!(f.py(1.0), 20.0);
        let degenerate = Frame::new((3.0, 3.0), (0.0, 1.0), 0.0, 0.0, 1.0, 1.0);
        assert!(degenerate.px(3.0).is_finite());
    }
}
