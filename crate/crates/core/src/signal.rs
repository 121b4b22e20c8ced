//! Reference-label smoothing, fluctuation characterization and the median
//! post-filter applied to streams of network estimates.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default low-pass window applied to the 100 Hz reference velocity.
pub const DEFAULT_LOWPASS_WINDOW_S: f64 = 0.5;

/// Uniformly sampled series: `values[i]` is taken at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("start time must be finite"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { t0, dt, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Index of the sample nearest to `t`, clamped to the series.
    pub fn nearest_index(&self, t: f64) -> usize {
        if self.values.is_empty() {
            return 0;
        }
        let i = ((t - self.t0) / self.dt).round();
        i.clamp(0.0, (self.values.len() - 1) as f64) as usize
    }

    fn same_grid(&self, other: &TimeSeries) -> bool {
        self.values.len() == other.values.len()
            && (self.t0 - other.t0).abs() <= 1e-9 * self.dt
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    /// Writes `t,value` rows. Values use the shortest representation that
    /// parses back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.write_record([self.time(i).to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the `t,value` schema. The grid is inferred from the first two
    /// timestamps and every later timestamp must agree with it.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
            return Err(Error::Format { offset: 0, message: "expected header `t,value`".into() });
        }
        let mut ts = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Format { offset, message: e.to_string() })
            };
            ts.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        if ts.len() < 2 {
            return Err(Error::Format { offset: 0, message: "need at least two rows to infer the time step".into() });
        }
        let dt = ts[1] - ts[0];
        for (i, t) in ts.iter().enumerate() {
            let expect = ts[0] + i as f64 * dt;
            if (t - expect).abs() > 1e-6 * dt {
                return Err(Error::Format { offset: 0, message: format!("row {i} is off the uniform time grid") });
            }
        }
        TimeSeries::new(ts[0], dt, values)
    }
}

/// Residual statistics of a raw series about its low-pass trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationStats {
    pub mean: f64,
    /// Half-width of the smallest symmetric band about zero holding at least
    /// 90% of the residuals.
    pub band90: f64,
}

/// Odd moving-average length for a requested window duration.
pub fn lowpass_length(window_s: f64, dt: f64) -> usize {
    let n = (window_s / dt).round().max(1.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Zero-phase centered moving average with reflective padding at both ends.
pub fn lowpass_reference(series: &TimeSeries, window_s: f64) -> Result<TimeSeries> {
    if !(window_s >= 3.0 * series.dt * (1.0 - 1e-9)) {
        return Err(Error::invalid(format!(
            "low-pass window {window_s} s is shorter than three samples ({} s)",
            3.0 * series.dt
        )));
    }
    let len = lowpass_length(window_s, series.dt);
    let n = series.len();
    if len > n {
        return Err(Error::invalid(format!("low-pass window of {len} samples exceeds series length {n}")));
    }
    let half = (len / 2) as isize;
    let x = &series.values;
    // Reflection about the end samples (the edge sample is not repeated).
    let at = |i: isize| -> f64 {
        let last = n as isize - 1;
        let mut j = i;
        if j < 0 {
            j = -j;
        }
        if j > last {
            j = 2 * last - j;
        }
        x[j.clamp(0, last) as usize]
    };
    let inv = 1.0 / len as f64;
    let values = (0..n as isize)
        .map(|i| (i - half..=i + half).map(at).sum::<f64>() * inv)
        .collect();
    Ok(TimeSeries { t0: series.t0, dt: series.dt, values })
}

pub fn fluctuation_band(raw: &TimeSeries, filtered: &TimeSeries) -> Result<FluctuationStats> {
    if !raw.same_grid(filtered) {
        return Err(Error::invalid("raw and filtered series are on different time grids"));
    }
    if raw.is_empty() {
        return Err(Error::invalid("empty series"));
    }
    let residuals: Vec<f64> = raw.values.iter().zip(&filtered.values).map(|(r, f)| r - f).collect();
    Ok(FluctuationStats { mean: mean(&residuals), band90: symmetric_band(&residuals, 0.9) })
}

/// Smallest `b >= 0` such that at least `coverage` of `residuals` lie in `[-b, b]`.
pub fn symmetric_band(residuals: &[f64], coverage: f64) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let mut mags: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let need = ((coverage * mags.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    mags[need.min(mags.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MedianMode {
    /// One output per disjoint block of `w` inputs, stamped at the block center.
    NonOverlapping,
    /// One output per input from the trailing `w` inputs (shorter prefix at the start).
    Sliding,
}

pub const DEFAULT_MEDIAN_WINDOW: usize = 6;

pub fn sliding_median(estimates: &TimeSeries, w: usize, mode: MedianMode) -> Result<TimeSeries> {
    if w < 1 {
        return Err(Error::invalid("median window must be at least 1"));
    }
    if estimates.len() < w {
        return Err(Error::invalid(format!(
            "series of length {} is shorter than the median window {w}",
            estimates.len()
        )));
    }
    let x = &estimates.values;
    match mode {
        MedianMode::NonOverlapping => {
            let values = x.chunks_exact(w).map(median).collect();
            Ok(TimeSeries {
                t0: estimates.t0 + (w - 1) as f64 / 2.0 * estimates.dt,
                dt: w as f64 * estimates.dt,
                values,
            })
        }
        MedianMode::Sliding => {
            let values = (0..x.len()).map(|i| median(&x[(i + 1).saturating_sub(w)..=i])).collect();
            Ok(TimeSeries { t0: estimates.t0, dt: estimates.dt, values })
        }
    }
}

/// Median of a nonempty slice; even lengths give the midpoint of the two
/// central order statistics.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
