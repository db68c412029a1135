//! Timestamped scalar series: loading, daily regularization and weekly
//! subsampling.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default epoch for series built directly from values.
pub const DEFAULT_EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("invalid default epoch"),
};

/// Observations at strictly increasing times, measured in days since `epoch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    epoch: NaiveDate,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, epoch: NaiveDate) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidSeries(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                available: times.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite value at index {i}")));
        }
        if let Some(i) = times.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite time at index {i}")));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSeries(format!(
                "times not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { times, values, epoch })
    }

    /// Unit-spaced series with times `0, 1, ..., n-1`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|i| i as f64).collect();
        Self::new(times, values, DEFAULT_EPOCH)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn epoch(&self) -> NaiveDate {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Same timestamps, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.times.clone(), values, self.epoch)
    }

    /// True when times are consecutive integers.
    pub fn is_daily(&self) -> bool {
        self.times[0].fract() == 0.0 && self.times.windows(2).all(|w| w[1] - w[0] == 1.0)
    }

    pub(crate) fn require_daily(&self) -> Result<()> {
        if self.is_daily() {
            Ok(())
        } else {
            Err(Error::NotDaily("times must be consecutive integer days".into()))
        }
    }

    /// Contiguous sub-series `[start, end)` by index.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.times[start..end].to_vec(),
            self.values[start..end].to_vec(),
            self.epoch,
        )
    }

    /// Index of the observation at exactly time `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|probe| probe.total_cmp(&t)).ok()
    }

    /// Calendar date of a (whole-day) time offset.
    pub fn date_of(&self, t: f64) -> NaiveDate {
        day_to_date(self.epoch, t)
    }
}

pub(crate) fn day_to_date(epoch: NaiveDate, t: f64) -> NaiveDate {
    let d = t.floor();
    if d >= 0.0 {
        epoch + Days::new(d as u64)
    } else {
        epoch - Days::new((-d) as u64)
    }
}

/// Runs of days filled in by [`interpolate_daily`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap_spans: Vec<GapSpan>,
    pub total_inserted: usize,
}

/// Days strictly between two consecutive observations at `start_time` and
/// `end_time` that had no observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpan {
    pub start_time: f64,
    pub end_time: f64,
    pub missing_count: usize,
}

impl GapReport {
    pub fn is_empty(&self) -> bool {
        self.total_inserted == 0
    }

    /// Whether a day of the regularized series was filled in.
    pub fn is_inserted(&self, day: f64) -> bool {
        self.gap_spans.iter().any(|g| day > g.start_time && day < g.end_time)
    }
}

/// Read `date,value` rows (ISO-8601 dates, optional header) from a file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Read `date,value` rows from any reader. Rows are sorted by date; the epoch
/// is the earliest date.
pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::Parse {
                row,
                message: "expected `date,value`".into(),
            });
        }
        let date = match NaiveDate::parse_from_str(&record[0], "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) if rows.is_empty() && record[1].parse::<f64>().is_err() => continue,
            Err(e) => {
                return Err(Error::Parse {
                    row,
                    message: format!("bad date {:?}: {e}", &record[0]),
                })
            }
        };
        let value: f64 = record[1].parse().map_err(|e| Error::Parse {
            row,
            message: format!("bad value {:?}: {e}", &record[1]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                row,
                message: "non-finite value".into(),
            });
        }
        rows.push((date, value, row));
    }

    if rows.len() < 2 {
        return Err(Error::TooFewRows);
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateDate {
            date: w[1].0.to_string(),
            row: w[1].2.max(w[0].2),
        });
    }
    let epoch = rows[0].0;
    let times = rows.iter().map(|r| (r.0 - epoch).num_days() as f64).collect();
    let values = rows.iter().map(|r| r.1).collect();
    TimeSeries::new(times, values, epoch)
}

/// Linear interpolation onto every whole day between the first and last
/// observation. Observed days keep their exact values.
pub fn interpolate_daily(s: &TimeSeries) -> (TimeSeries, GapReport) {
    let t = s.times();
    let x = s.values();
    let first = t[0].ceil();
    let last = t[t.len() - 1].floor();

    let mut times = Vec::with_capacity((last - first) as usize + 1);
    let mut values = Vec::with_capacity(times.capacity());
    let mut report = GapReport::default();

    let mut seg = 0;
    let mut day = first;
    while day <= last {
        while seg + 1 < t.len() - 1 && t[seg + 1] <= day {
            seg += 1;
        }
        let (t0, t1) = (t[seg], t[seg + 1]);
        let v = if day == t0 {
            x[seg]
        } else if day == t1 {
            x[seg + 1]
        } else {
            let w = (day - t0) / (t1 - t0);
            x[seg] + w * (x[seg + 1] - x[seg])
        };
        times.push(day);
        values.push(v);
        day += 1.0;
    }

    for (w, _) in t.windows(2).zip(0..) {
        let missing = whole_days_between(w[0], w[1]);
        if missing > 0 {
            report.gap_spans.push(GapSpan {
                start_time: w[0],
                end_time: w[1],
                missing_count: missing,
            });
            report.total_inserted += missing;
        }
    }

    let out = TimeSeries::new(times, values, s.epoch()).expect("interpolated grid inherits a valid series");
    (out, report)
}

fn whole_days_between(a: f64, b: f64) -> usize {
    let lo = a.floor() + 1.0;
    let hi = b.ceil() - 1.0;
    if hi < lo {
        0
    } else {
        (hi - lo) as usize + 1
    }
}

/// Every 7th observation of a daily series, starting at index 0.
pub fn subsample_weekly(s: &TimeSeries) -> Result<TimeSeries> {
    s.require_daily()?;
    let m = s.len() / 7;
    if m < 2 {
        // one point is not a series; `weekly_values` still returns it
        return Err(Error::InsufficientData {
            required: 14,
            available: s.len(),
        });
    }
    let idx = (0..m).map(|k| 7 * k);
    TimeSeries::new(
        idx.clone().map(|i| s.times()[i]).collect(),
        idx.map(|i| s.values()[i]).collect(),
        s.epoch(),
    )
}

/// Values at indices `0, 7, 14, ...` (length `len / 7`), without building a
/// series.
pub fn weekly_values(s: &TimeSeries) -> Result<Vec<f64>> {
    s.require_daily()?;
    Ok((0..s.len() / 7).map(|k| s.values()[7 * k]).collect())
}

/// Write `day_index,date,value,interpolated`.
pub fn write_series_csv<W: Write>(out: W, s: &TimeSeries, gaps: Option<&GapReport>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse {
        row: 0,
        message: e.to_string(),
    };
    w.write_record(["day_index", "date", "value", "interpolated"])
        .map_err(csv_err)?;
    for (&t, &v) in s.times().iter().zip(s.values()) {
        let flag = gaps.is_some_and(|g| g.is_inserted(t));
        w.write_record([
            format!("{t}"),
            s.date_of(t).to_string(),
            format!("{v}"),
            if flag { "1".into() } else { "0".into() },
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Write `date,value` rows, the loader's input format.
pub fn write_date_value_csv<W: Write>(out: W, s: &TimeSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse {
        row: 0,
        message: e.to_string(),
    };
    w.write_record(["date", "value"]).map_err(csv_err)?;
    for (&t, &v) in s.times().iter().zip(s.values()) {
        w.write_record([s.date_of(t).to_string(), format!("{v}")])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
