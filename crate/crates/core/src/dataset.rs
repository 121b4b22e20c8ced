//! Center-block holdout partitioning and windowing.
//!
//! All boundaries are computed in whole sensor-sample ticks. Windows are cut
//! independently inside each partition range and never cross a range
//! boundary, so no training or validation window can contain a test sample.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{body_components, EstimationTarget, FlowState};
use crate::error::{Error, Result};
use crate::signal::{TimeSeries, DEFAULT_LOWPASS_WINDOW_S};
use crate::simgen::RunRecord;

/// Half-open time interval `[start, end)`, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: f64,
    pub end: f64,
}

impl TimeRange {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && start < end) {
            return Err(Error::invalid(format!("invalid time range [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Half-open range of sensor-sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRange {
    pub start: usize,
    pub end: usize,
}

impl SampleRange {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlaps(&self, other: &SampleRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &SampleRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn to_time(self, rate: f64) -> TimeRange {
        TimeRange { start: self.start as f64 / rate, end: self.end as f64 / rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_frac: f64,
    pub val_frac: f64,
    /// Window duration, seconds.
    pub window_s: f64,
    pub train_stride_s: f64,
    /// Stride for validation and reporting windows; `None` means one window length.
    pub eval_stride_s: Option<f64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_frac: 0.10, val_frac: 0.10, window_s: 0.016, train_stride_s: 0.0032, eval_stride_s: None }
    }
}

impl SplitSpec {
    pub fn eval_stride(&self) -> f64 {
        self.eval_stride_s.unwrap_or(self.window_s)
    }

    pub fn validate(&self) -> Result<()> {
        let fracs_ok = (0.0..1.0).contains(&self.test_frac)
            && (0.0..1.0).contains(&self.val_frac)
            && self.test_frac + self.val_frac < 1.0;
        if !fracs_ok {
            return Err(Error::invalid(format!(
                "test fraction {} and validation fraction {} must be in [0, 1) and sum below 1",
                self.test_frac, self.val_frac
            )));
        }
        if !(self.window_s > 0.0 && self.train_stride_s > 0.0 && self.eval_stride() > 0.0) {
            return Err(Error::invalid("window length and strides must be positive"));
        }
        Ok(())
    }
}

/// Disjoint train, validation and test sample ranges for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub sensor_rate: f64,
    pub n_samples: usize,
    pub train: Vec<SampleRange>,
    pub validation: Vec<SampleRange>,
    pub test: SampleRange,
}

impl Partition {
    pub fn ranges(&self, split: Split) -> Vec<SampleRange> {
        match split {
            Split::Train => self.train.clone(),
            Split::Validation => self.validation.clone(),
            Split::Test => vec![self.test],
        }
    }

    pub fn time_ranges(&self, split: Split) -> Vec<TimeRange> {
        self.ranges(split).into_iter().map(|r| r.to_time(self.sensor_rate)).collect()
    }

    /// Count of training or validation windows (at their respective strides)
    /// sharing at least one sample with the test block.
    pub fn leakage_violations(&self, window: usize, train_stride: usize, eval_stride: usize) -> usize {
        let leaks = |ranges: &[SampleRange], stride: usize| {
            ranges
                .iter()
                .flat_map(|r| window_starts(*r, window, stride))
                .filter(|w| w.overlaps(&self.test))
                .count()
        };
        leaks(&self.train, train_stride) + leaks(&self.validation, eval_stride)
    }
}

/// Sample count for a duration, rejecting durations that are not whole ticks.
pub fn to_samples(seconds: f64, rate: f64) -> Result<usize> {
    let x = seconds * rate;
    let n = x.round();
    if (x - n).abs() > 1e-6 * n.max(1.0) {
        return Err(Error::invalid(format!("{seconds} s is not a whole number of samples at {rate} Hz")));
    }
    Ok(n as usize)
}

/// Test block centered on the run midpoint; validation split evenly between
/// the two run extremes; training fills the two interior gaps.
pub fn center_block_partition(duration_s: f64, sensor_rate: f64, spec: &SplitSpec) -> Result<Partition> {
    spec.validate()?;
    let n = (duration_s * sensor_rate).round() as usize;
    let tick = |seconds: f64| (seconds * sensor_rate).round() as usize;
    let test = SampleRange {
        start: tick(duration_s * (1.0 - spec.test_frac) / 2.0),
        end: tick(duration_s * (1.0 + spec.test_frac) / 2.0),
    };
    if test.is_empty() {
        return Err(Error::invalid("test fraction leaves an empty test block"));
    }
    let val_each = tick(duration_s * spec.val_frac / 2.0);
    let head = SampleRange { start: 0, end: val_each };
    let tail = SampleRange { start: n - val_each, end: n };
    let train = vec![
        SampleRange { start: head.end, end: test.start },
        SampleRange { start: test.end, end: tail.start },
    ];
    if train.iter().any(|r| r.start >= r.end) {
        return Err(Error::invalid("fractions leave no training time"));
    }
    let validation = [head, tail].into_iter().filter(|r| !r.is_empty()).collect();
    Ok(Partition { sensor_rate, n_samples: n, train, validation, test })
}

/// Window placements inside `range`: starting at `range.start`, advancing by
/// `stride`, kept only when fully contained.
pub fn window_starts(range: SampleRange, window: usize, stride: usize) -> impl Iterator<Item = SampleRange> {
    let count = if window == 0 || stride == 0 || range.len() < window {
        0
    } else {
        (range.len() - window) / stride + 1
    };
    (0..count).map(move |i| {
        let start = range.start + i * stride;
        SampleRange { start, end: start + window }
    })
}

/// Label channels of one run at the label rate: low-pass filtered speed and
/// unfiltered angle of attack.
#[derive(Debug, Clone)]
pub struct LabelSource {
    pub filtered_speed: TimeSeries,
    pub aoa: TimeSeries,
    samples_per_label: usize,
}

impl LabelSource {
    pub fn new(record: &RunRecord, lowpass_window_s: f64) -> Result<Self> {
        Ok(Self {
            filtered_speed: record.filtered_speed(lowpass_window_s)?,
            aoa: record.ref_aoa_series(),
            samples_per_label: record.array.samples_per_label(),
        })
    }

    /// Mean filtered speed and mean angle of attack over the label samples
    /// whose timestamps fall inside `span`.
    pub fn mean_state(&self, span: SampleRange) -> Result<FlowState> {
        let spl = self.samples_per_label;
        let first = span.start.div_ceil(spl);
        let last = span.end.div_ceil(spl).min(self.filtered_speed.len());
        if first >= last {
            return Err(Error::invalid(format!(
                "no label samples inside samples [{}, {})",
                span.start, span.end
            )));
        }
        let n = (last - first) as f64;
        let speed = self.filtered_speed.values[first..last].iter().sum::<f64>() / n;
        let aoa = self.aoa.values[first..last].iter().sum::<f64>() / n;
        Ok(FlowState { speed, aoa })
    }

    pub fn label(&self, span: SampleRange, target: EstimationTarget) -> Result<Vec<f64>> {
        let state = self.mean_state(span)?;
        Ok(match target {
            EstimationTarget::ScalarSpeed => vec![state.speed],
            EstimationTarget::BodyComponents => {
                let v = body_components(state)?;
                vec![v.vx, v.vy]
            }
        })
    }
}

/// Label for one window span of `record` using the default low-pass filter.
pub fn window_label(record: &RunRecord, span: TimeRange, target: EstimationTarget) -> Result<Vec<f64>> {
    let rate = record.array.sensor_rate;
    let samples = SampleRange { start: (span.start * rate).round() as usize, end: (span.end * rate).round() as usize };
    LabelSource::new(record, DEFAULT_LOWPASS_WINDOW_S)?.label(samples, target)
}

/// Borrowed `n_sensors x len` block of a run's sensor matrix.
#[derive(Debug, Clone, Copy)]
pub struct SensorView<'a> {
    data: &'a [f32],
    n_sensors: usize,
    row_stride: usize,
    start: usize,
    len: usize,
}

impl<'a> SensorView<'a> {
    pub fn new(data: &'a [f32], n_sensors: usize, row_stride: usize, start: usize, len: usize) -> Result<Self> {
        if n_sensors == 0 || data.len() < n_sensors * row_stride || start + len > row_stride {
            return Err(Error::Shape(format!(
                "view of {n_sensors} x [{start}, {}) does not fit a matrix of {} values with row stride {row_stride}",
                start + len,
                data.len()
            )));
        }
        Ok(Self { data, n_sensors, row_stride, start, len })
    }

    pub fn whole(record: &'a RunRecord) -> Self {
        let n = record.n_samples();
        Self { data: &record.sensors, n_sensors: record.array.n_sensors, row_stride: n, start: 0, len: n }
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, sensor: usize) -> &'a [f32] {
        let off = sensor * self.row_stride + self.start;
        &self.data[off..off + self.len]
    }
}

/// One model input: a sensor block, its averaged flow-state label and where it came from.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    pub run_label: &'a str,
    pub span: TimeRange,
    pub samples: SampleRange,
    /// Index of the partition range the window was cut from.
    pub segment: usize,
    pub sensors: SensorView<'a>,
    pub label: Vec<f64>,
}

/// Cuts windows from each range in order; ranges are processed independently.
pub fn extract_windows<'a>(
    record: &'a RunRecord,
    labels: &LabelSource,
    ranges: &[SampleRange],
    stride_s: f64,
    window_s: f64,
    target: EstimationTarget,
) -> Result<Vec<Window<'a>>> {
    let rate = record.array.sensor_rate;
    let window = to_samples(window_s, rate)?;
    let stride = to_samples(stride_s, rate)?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("window and stride must span at least one sample"));
    }
    let n = record.n_samples();
    let mut out = Vec::new();
    for (segment, range) in ranges.iter().enumerate() {
        if range.end > n {
            return Err(Error::invalid(format!("range [{}, {}) exceeds the record", range.start, range.end)));
        }
        for w in window_starts(*range, window, stride) {
            out.push(Window {
                run_label: &record.spec.label,
                span: w.to_time(rate),
                samples: w,
                segment,
                sensors: SensorView::new(&record.sensors, record.array.n_sensors, n, w.start, window)?,
                label: labels.label(w, target)?,
            });
        }
    }
    Ok(out)
}

/// Five specs withholding 10% to 50% of each run, validation fixed at `base`.
pub fn holdout_sweep_specs(base: &SplitSpec) -> Vec<SplitSpec> {
    (1..=5).map(|i| SplitSpec { test_frac: i as f64 / 10.0, ..*base }).collect()
}

/// Auditable record of one run's split, boundaries in sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionManifest {
    pub run_label: String,
    pub split: SplitSpec,
    pub partition: Partition,
}

impl PartitionManifest {
    pub fn to_text(&self) -> String {
        let p = &self.partition;
        let s = &self.split;
        let mut out = String::new();
        let _ = writeln!(out, "# center-block partition manifest; ranges are half-open sensor-sample indices");
        let _ = writeln!(out, "run = {}", self.run_label);
        let _ = writeln!(out, "sensor_rate_hz = {}", p.sensor_rate);
        let _ = writeln!(out, "n_samples = {}", p.n_samples);
        let _ = writeln!(out, "test_frac = {}", s.test_frac);
        let _ = writeln!(out, "val_frac = {}", s.val_frac);
        let _ = writeln!(out, "window_s = {}", s.window_s);
        let _ = writeln!(out, "train_stride_s = {}", s.train_stride_s);
        let _ = writeln!(out, "eval_stride_s = {}", s.eval_stride());
        let _ = writeln!(out, "test = {}..{}", p.test.start, p.test.end);
        for r in &p.validation {
            let _ = writeln!(out, "validation = {}..{}", r.start, r.end);
        }
        for r in &p.train {
            let _ = writeln!(out, "train = {}..{}", r.start, r.end);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut run_label = None;
        let mut split = SplitSpec::default();
        let mut rate = None;
        let mut n_samples = None;
        let mut test = None;
        let mut train = Vec::new();
        let mut validation = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let here = offset;
            offset += line.len() as u64 + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::Format { offset: here, message: m };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected `key = value`: {line}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{k}: {e}")));
            let range = |v: &str| -> Result<SampleRange> {
                let (a, b) = v.split_once("..").ok_or_else(|| bad(format!("{k}: expected start..end")))?;
                let p = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
                Ok(SampleRange { start: p(a)?, end: p(b)? })
            };
            match k {
                "run" => run_label = Some(v.to_string()),
                "sensor_rate_hz" => rate = Some(num(v)?),
                "n_samples" => n_samples = Some(num(v)? as usize),
                "test_frac" => split.test_frac = num(v)?,
                "val_frac" => split.val_frac = num(v)?,
                "window_s" => split.window_s = num(v)?,
                "train_stride_s" => split.train_stride_s = num(v)?,
                "eval_stride_s" => split.eval_stride_s = Some(num(v)?),
                "test" => test = Some(range(v)?),
                "validation" => validation.push(range(v)?),
                "train" => train.push(range(v)?),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Format { offset: 0, message: format!("manifest lacks `{what}`") };
        Ok(Self {
            run_label: run_label.ok_or_else(|| missing("run"))?,
            split,
            partition: Partition {
                sensor_rate: rate.ok_or_else(|| missing("sensor_rate_hz"))?,
                n_samples: n_samples.ok_or_else(|| missing("n_samples"))?,
                train,
                validation,
                test: test.ok_or_else(|| missing("test"))?,
            },
        })
    }
}

/// Labels with the default 0.5 s speed filter.
pub fn default_labels(record: &RunRecord) -> Result<LabelSource> {
    LabelSource::new(record, DEFAULT_LOWPASS_WINDOW_S)
}
