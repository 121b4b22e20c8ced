//! Error metrics, per-run decomposition, the median post-filter comparison and
//! the holdout-sweep tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelSource, Split, Window};
use crate::domain::{aoa_from_components, speed_from_components, BodyVelocity};
use crate::error::{Error, Result};
use crate::signal::{sliding_median, MedianMode, TimeSeries, DEFAULT_MEDIAN_WINDOW};

pub fn abs_error(reference: f64, estimate: f64) -> f64 {
    (reference - estimate).abs()
}

/// Percent error relative to `|reference|`; `None` at a zero reference, which
/// is left out of relative aggregates.
pub fn rel_error(reference: f64, estimate: f64) -> Option<f64> {
    (reference != 0.0).then(|| 100.0 * (reference - estimate).abs() / reference.abs())
}

/// Linear-interpolation order statistic at rank `p/100 * (n - 1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("percentile of non-finite values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    Ok(v[lo] + (rank - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    /// Scalar speed from a one-output model.
    ZeroAoASpeed,
    /// Angle of attack derived from predicted body components.
    Aoa,
    /// Speed derived as the norm of predicted body components.
    SpeedMagnitude,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::ZeroAoASpeed, Quantity::Aoa, Quantity::SpeedMagnitude];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::ZeroAoASpeed => "zero_aoa_speed",
            Quantity::Aoa => "aoa",
            Quantity::SpeedMagnitude => "speed_magnitude",
        }
    }

    /// Model output count this quantity is derived from.
    pub fn dim(self) -> usize {
        match self {
            Quantity::ZeroAoASpeed => 1,
            Quantity::Aoa | Quantity::SpeedMagnitude => 2,
        }
    }

    pub fn for_dim(k: usize) -> &'static [Quantity] {
        match k {
            1 => &Quantity::ALL[..1],
            _ => &Quantity::ALL[1..],
        }
    }

    fn from_output(self, v: &[f64]) -> Result<f64> {
        match self {
            Quantity::ZeroAoASpeed => Ok(v[0]),
            Quantity::Aoa => aoa_from_components(BodyVelocity { vx: v[0], vy: v[1] }),
            Quantity::SpeedMagnitude => Ok(speed_from_components(BodyVelocity { vx: v[0], vy: v[1] })),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Raw,
    MedianFiltered,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::MedianFiltered => "median_filtered",
        }
    }
}

/// Label-rate reference channels of one run: filtered speed and angle of attack.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrack {
    pub speed: TimeSeries,
    pub aoa: TimeSeries,
}

impl ReferenceTrack {
    fn at(&self, t: f64, q: Quantity) -> f64 {
        match q {
            Quantity::Aoa => self.aoa.values[self.aoa.nearest_index(t)],
            Quantity::ZeroAoASpeed | Quantity::SpeedMagnitude => self.speed.values[self.speed.nearest_index(t)],
        }
    }
}

impl From<&LabelSource> for ReferenceTrack {
    fn from(l: &LabelSource) -> Self {
        Self { speed: l.filtered_speed.clone(), aoa: l.aoa.clone() }
    }
}

/// Predictions for the non-overlapping windows of one run and split, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLog {
    pub run_label: String,
    pub split: Split,
    /// Window center times, seconds.
    pub times: Vec<f64>,
    /// Contiguous partition range each window came from. The median filter
    /// never spans two segments.
    pub segments: Vec<usize>,
    pub predicted: Vec<Vec<f64>>,
    /// Window labels in model output units.
    pub reference: Vec<Vec<f64>>,
    pub track: ReferenceTrack,
}

impl PredictionLog {
    pub fn from_windows(
        split: Split,
        windows: &[Window<'_>],
        predicted: Vec<Vec<f64>>,
        labels: &LabelSource,
    ) -> Result<Self> {
        let run_label = windows.first().map(|w| w.run_label.to_string()).unwrap_or_default();
        if windows.iter().any(|w| w.run_label != run_label) {
            return Err(Error::invalid("a prediction log holds one run"));
        }
        let log = Self {
            run_label,
            split,
            times: windows.iter().map(|w| w.span.center()).collect(),
            segments: windows.iter().map(|w| w.segment).collect(),
            predicted,
            reference: windows.iter().map(|w| w.label.clone()).collect(),
            track: labels.into(),
        };
        log.validate()?;
        Ok(log)
    }

    pub fn dim(&self) -> usize {
        self.reference.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 {
            return Err(Error::invalid(format!("empty prediction log for {}", self.run_label)));
        }
        if self.segments.len() != n || self.predicted.len() != n || self.reference.len() != n {
            return Err(Error::Shape(format!("prediction log for {} has ragged columns", self.run_label)));
        }
        let k = self.dim();
        if !(k == 1 || k == 2) || self.predicted.iter().chain(&self.reference).any(|v| v.len() != k) {
            return Err(Error::Shape(format!("prediction log for {} mixes output sizes", self.run_label)));
        }
        if self.times.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::invalid(format!("window times for {} are not strictly increasing", self.run_label)));
        }
        Ok(())
    }
}

/// One compared value: reference and estimate at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    pub reference: f64,
    pub estimate: f64,
}

/// Derives `quantity` at each raw window, or at each median-filtered block
/// against the nearest label sample. A trailing partial block of a segment,
/// and segments shorter than the filter, yield nothing when filtered.
pub fn error_samples(log: &PredictionLog, stage: Stage, quantity: Quantity) -> Result<Vec<ErrorSample>> {
    log.validate()?;
    let k = log.dim();
    if quantity.dim() != k {
        return Err(Error::Shape(format!(
            "{} needs a {}-output model, log for {} has {k}",
            quantity.name(),
            quantity.dim(),
            log.run_label
        )));
    }
    match stage {
        Stage::Raw => log
            .times
            .iter()
            .zip(&log.predicted)
            .zip(&log.reference)
            .map(|((&t, p), r)| {
                Ok(ErrorSample { t, reference: quantity.from_output(r)?, estimate: quantity.from_output(p)? })
            })
            .collect(),
        Stage::MedianFiltered => {
            let mut out = Vec::new();
            let mut i = 0;
            while i < log.len() {
                let seg = log.segments[i];
                let j = i + log.segments[i..].iter().take_while(|&&s| s == seg).count();
                if j - i >= DEFAULT_MEDIAN_WINDOW {
                    let times = &log.times[i..j];
                    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
                    let filtered: Vec<TimeSeries> = (0..k)
                        .map(|c| {
                            let comp = log.predicted[i..j].iter().map(|p| p[c]).collect();
                            sliding_median(&TimeSeries::new(times[0], dt, comp)?, DEFAULT_MEDIAN_WINDOW, MedianMode::NonOverlapping)
                        })
                        .collect::<Result<_>>()?;
                    for b in 0..filtered[0].len() {
                        let t = filtered[0].time(b);
                        let v: Vec<f64> = filtered.iter().map(|f| f.values[b]).collect();
                        out.push(ErrorSample { t, reference: log.track.at(t, quantity), estimate: quantity.from_output(&v)? });
                    }
                }
                i = j;
            }
            Ok(out)
        }
    }
}

/// Mean, 90th percentile and maximum of absolute and relative errors. The
/// relative fields are `None` when every reference is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub quantity: Quantity,
    pub stage: Stage,
    pub n: usize,
    pub mean_abs: f64,
    pub p90_abs: f64,
    pub max_abs: f64,
    pub n_rel: usize,
    pub mean_rel: Option<f64>,
    pub p90_rel: Option<f64>,
    pub max_rel: Option<f64>,
}

pub fn summarize_samples(samples: &[ErrorSample], quantity: Quantity, stage: Stage) -> Result<ErrorSummary> {
    if samples.is_empty() {
        return Err(Error::invalid(format!("no {} samples to summarize", quantity.name())));
    }
    let abs: Vec<f64> = samples.iter().map(|s| abs_error(s.reference, s.estimate)).collect();
    let rel: Vec<f64> = samples.iter().filter_map(|s| rel_error(s.reference, s.estimate)).collect();
    let stats = |v: &[f64]| -> Result<(f64, f64, f64)> {
        Ok((v.iter().sum::<f64>() / v.len() as f64, percentile(v, 90.0)?, v.iter().copied().fold(f64::MIN, f64::max)))
    };
    let (mean_abs, p90_abs, max_abs) = stats(&abs)?;
    let (mean_rel, p90_rel, max_rel) = if rel.is_empty() {
        (None, None, None)
    } else {
        let (a, b, c) = stats(&rel)?;
        (Some(a), Some(b), Some(c))
    };
    Ok(ErrorSummary { quantity, stage, n: abs.len(), mean_abs, p90_abs, max_abs, n_rel: rel.len(), mean_rel, p90_rel, max_rel })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_label: String,
    pub split: Split,
    pub summary: ErrorSummary,
}

/// Per-run summaries and, for each split present, a summary pooled over
/// every window of that split (not a mean of run means).
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub per_run: Vec<RunSummary>,
    pub pooled: Vec<(Split, ErrorSummary)>,
}

pub fn summarize(logs: &[PredictionLog], stage: Stage, quantity: Quantity) -> Result<Summary> {
    let k = logs.first().map(PredictionLog::dim).ok_or_else(|| Error::invalid("no prediction logs"))?;
    if logs.iter().any(|l| l.dim() != k) {
        return Err(Error::Shape("prediction logs mix one- and two-output models".into()));
    }
    let mut per_run = Vec::new();
    let mut pooled: BTreeMap<Split, Vec<ErrorSample>> = BTreeMap::new();
    for log in logs {
        let samples = error_samples(log, stage, quantity)?;
        if samples.is_empty() {
            continue;
        }
        per_run.push(RunSummary {
            run_label: log.run_label.clone(),
            split: log.split,
            summary: summarize_samples(&samples, quantity, stage)?,
        });
        pooled.entry(log.split).or_default().extend(samples);
    }
    let pooled = pooled
        .into_iter()
        .map(|(split, s)| Ok((split, summarize_samples(&s, quantity, stage)?)))
        .collect::<Result<_>>()?;
    Ok(Summary { per_run, pooled })
}

/// Pooled summary over the logs of one split that satisfy `keep`.
pub fn pooled_summary(
    logs: &[PredictionLog],
    split: Split,
    stage: Stage,
    quantity: Quantity,
    keep: impl Fn(&PredictionLog) -> bool,
) -> Result<ErrorSummary> {
    let mut samples = Vec::new();
    for log in logs.iter().filter(|l| l.split == split && keep(l)) {
        samples.extend(error_samples(log, stage, quantity)?);
    }
    summarize_samples(&samples, quantity, stage)
}

fn write_header<W: Write>(w: &mut W, provenance: &[String]) -> Result<()> {
    for line in provenance {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_fields(s: &ErrorSummary) -> [String; 6] {
    [s.mean_abs.to_string(), s.p90_abs.to_string(), s.max_abs.to_string(), opt(s.mean_rel), opt(s.p90_rel), opt(s.max_rel)]
}

const STAT_COLUMNS: [&str; 6] = ["mean_abs", "p90_abs", "max_abs", "mean_rel", "p90_rel", "max_rel"];

/// `run,split,quantity,stage,mean_abs,p90_abs,max_abs,mean_rel,p90_rel,max_rel`.
pub fn write_per_run_csv<W: Write>(mut w: W, provenance: &[String], rows: &[RunSummary]) -> Result<()> {
    write_header(&mut w, provenance)?;
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["run", "split", "quantity", "stage"];
    head.extend(STAT_COLUMNS);
    out.write_record(&head)?;
    for r in rows {
        let s = &r.summary;
        let mut rec = vec![r.run_label.clone(), r.split.name().into(), s.quantity.name().into(), s.stage.name().into()];
        rec.extend(summary_fields(s));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Pooled statistics per split, quantity and stage. Every quantity and stage
/// gets a row; quantities the model does not produce have `n = 0` and empty
/// statistics.
pub fn write_summary_csv<W: Write>(
    mut w: W,
    provenance: &[String],
    pooled: &[(Split, ErrorSummary)],
    splits: &[Split],
) -> Result<()> {
    write_header(&mut w, provenance)?;
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["split", "quantity", "stage", "n"];
    head.extend(STAT_COLUMNS);
    out.write_record(&head)?;
    for &split in splits {
        for q in Quantity::ALL {
            for stage in [Stage::Raw, Stage::MedianFiltered] {
                let found = pooled.iter().find(|(sp, s)| *sp == split && s.quantity == q && s.stage == stage);
                let mut rec = vec![split.name().to_string(), q.name().into(), stage.name().into()];
                match found {
                    Some((_, s)) => {
                        rec.push(s.n.to_string());
                        rec.extend(summary_fields(s));
                    }
                    None => {
                        rec.push("0".into());
                        rec.extend(std::iter::repeat_n(String::new(), 6));
                    }
                }
                out.write_record(&rec)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `run,split,quantity,t,t_offset,ref,raw_est,filtered_est`, one row per raw
/// window. `t_offset` places runs end to end for plotting; `filtered_est` is the
/// median of the block containing the window, empty where no block was formed.
pub fn write_timeseries_csv<W: Write>(mut w: W, provenance: &[String], logs: &[PredictionLog]) -> Result<()> {
    write_header(&mut w, provenance)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run", "split", "quantity", "t", "t_offset", "ref", "raw_est", "filtered_est"])?;
    let mut offsets: Vec<(String, f64)> = Vec::new();
    let mut next = 0.0;
    for log in logs {
        if !offsets.iter().any(|(r, _)| *r == log.run_label) {
            offsets.push((log.run_label.clone(), next));
            next += log.track.speed.len() as f64 * log.track.speed.dt;
        }
    }
    for log in logs {
        let offset = offsets.iter().find(|(r, _)| *r == log.run_label).map_or(0.0, |o| o.1);
        for &q in Quantity::for_dim(log.dim()) {
            let raw = error_samples(log, Stage::Raw, q)?;
            let filtered = error_samples(log, Stage::MedianFiltered, q)?;
            let mut fi = 0;
            for (i, r) in raw.iter().enumerate() {
                // Blocks are consecutive runs of DEFAULT_MEDIAN_WINDOW windows;
                // find the block whose center is within half a block of t.
                let block_half = {
                    let w = DEFAULT_MEDIAN_WINDOW as f64;
                    let dt = if i + 1 < raw.len() { raw[i + 1].t - r.t } else if i > 0 { r.t - raw[i - 1].t } else { 0.0 };
                    0.5 * w * dt
                };
                while fi < filtered.len() && filtered[fi].t + block_half <= r.t {
                    fi += 1;
                }
                let f = filtered.get(fi).filter(|f| (f.t - r.t).abs() < block_half).map(|f| f.estimate.to_string());
                out.write_record([
                    log.run_label.clone(),
                    log.split.name().into(),
                    q.name().into(),
                    r.t.to_string(),
                    (r.t + offset).to_string(),
                    r.reference.to_string(),
                    r.estimate.to_string(),
                    f.unwrap_or_default(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Mean absolute error over the withheld block of one run, for one retrain
/// at one holdout fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub fraction: f64,
    pub retrain: usize,
    pub run_label: String,
    pub time_varying: bool,
    pub mean_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub run_label: String,
    pub time_varying: bool,
    /// Mean over retrains.
    pub mean_err: f64,
    /// Sample standard deviation over retrains.
    pub sigma: f64,
    pub per_retrain: Vec<f64>,
}

fn same_fraction(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Rows grouped constant-condition first, then by run and fraction. Every run
/// must have every fraction, and every fraction at least two retrains.
pub fn holdout_sweep_report(entries: &[SweepEntry], fractions: &[f64]) -> Result<Vec<SweepRow>> {
    let mut runs: Vec<(bool, String)> = entries.iter().map(|e| (e.time_varying, e.run_label.clone())).collect();
    runs.sort();
    runs.dedup();
    let mut rows = Vec::new();
    for (tv, run) in &runs {
        for &f in fractions {
            let mut members: Vec<&SweepEntry> =
                entries.iter().filter(|e| &e.run_label == run && same_fraction(e.fraction, f)).collect();
            if members.is_empty() {
                return Err(Error::invalid(format!("sweep has no results for {run} at fraction {f}")));
            }
            if members.len() < 2 {
                return Err(Error::invalid(format!("sweep needs at least two retrains, {run} at {f} has one")));
            }
            members.sort_by_key(|e| e.retrain);
            let per_retrain: Vec<f64> = members.iter().map(|e| e.mean_err).collect();
            let (mean_err, sigma) = crate::train::mean_std(&per_retrain);
            rows.push(SweepRow { fraction: f, run_label: run.clone(), time_varying: *tv, mean_err, sigma, per_retrain });
        }
    }
    Ok(rows)
}

/// `fraction,run,mean_err,sigma`.
pub fn write_sweep_csv<W: Write>(mut w: W, provenance: &[String], rows: &[SweepRow]) -> Result<()> {
    write_header(&mut w, provenance)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fraction", "run", "mean_err", "sigma"])?;
    for r in rows {
        out.write_record([r.fraction.to_string(), r.run_label.clone(), r.mean_err.to_string(), r.sigma.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("slope needs at least two paired points"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope needs at least two distinct abscissae"));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx)
}

/// Error trend of one condition group across the sweep. The group error of a
/// retrain at a fraction is the mean over the group's runs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTrend {
    pub fractions: Vec<f64>,
    /// `[fraction][retrain]` group error.
    pub by_retrain: Vec<Vec<f64>>,
    /// Across-retrain mean per fraction.
    pub mean: Vec<f64>,
    /// Least-squares slope of `mean` against fraction, error units per unit fraction.
    pub slope: f64,
    /// Across-retrain sample standard deviation, averaged over fractions.
    pub sigma_band: f64,
}

impl GroupTrend {
    /// Retrains whose group error at the largest fraction is at least that at
    /// the smallest, out of the total.
    pub fn rising_retrains(&self) -> (usize, usize) {
        let (first, last) = (&self.by_retrain[0], &self.by_retrain[self.by_retrain.len() - 1]);
        (first.iter().zip(last).filter(|(a, b)| b >= a).count(), first.len())
    }
}

pub fn group_trend(rows: &[SweepRow], time_varying: bool) -> Result<GroupTrend> {
    let group: Vec<&SweepRow> = rows.iter().filter(|r| r.time_varying == time_varying).collect();
    let mut fractions: Vec<f64> = group.iter().map(|r| r.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup_by(|a, b| same_fraction(*a, *b));
    if fractions.len() < 2 {
        return Err(Error::invalid("a trend needs at least two fractions"));
    }
    let n_retrains = group[0].per_retrain.len();
    if group.iter().any(|r| r.per_retrain.len() != n_retrains) {
        return Err(Error::invalid("every sweep row must have the same retrains"));
    }
    let mut by_retrain = Vec::new();
    for &f in &fractions {
        let at: Vec<&&SweepRow> = group.iter().filter(|r| same_fraction(r.fraction, f)).collect();
        by_retrain.push(
            (0..n_retrains).map(|i| at.iter().map(|r| r.per_retrain[i]).sum::<f64>() / at.len() as f64).collect::<Vec<_>>(),
        );
    }
    let (mean, sigmas): (Vec<f64>, Vec<f64>) = by_retrain.iter().map(|v| crate::train::mean_std(v)).unzip();
    let slope = ls_slope(&fractions, &mean)?;
    let sigma_band = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    Ok(GroupTrend { fractions, by_retrain, mean, slope, sigma_band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(n: usize, speed: f64) -> ReferenceTrack {
        ReferenceTrack {
            speed: TimeSeries::new(0.0, 0.01, vec![speed; n]).unwrap(),
            aoa: TimeSeries::new(0.0, 0.01, vec![0.0; n]).unwrap(),
        }
    }

    fn log(pred: &[f64], reference: f64) -> PredictionLog {
        let n = pred.len();
        PredictionLog {
            run_label: "Z-1".into(),
            split: Split::Test,
            times: (0..n).map(|i| 0.008 + 0.016 * i as f64).collect(),
            segments: vec![0; n],
            predicted: pred.iter().map(|&p| vec![p]).collect(),
            reference: vec![vec![reference]; n],
            track: track(100, reference),
        }
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(abs_error(1000.0, 1000.0), 0.0);
        assert_eq!(abs_error(1000.0, 997.5), 2.5);
        assert!((abs_error(8.5, 8.0) - 0.5).abs() < 1e-12);
        assert!((rel_error(1081.0, 1078.73).unwrap() - 0.21).abs() < 1e-3);
        assert_eq!(rel_error(100.0, 100.0), Some(0.0));
        assert!((rel_error(8.5, 9.35).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(rel_error(0.0, 0.3), None);
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 90.0).unwrap() - 90.1).abs() < 1e-12);
        assert_eq!(percentile(&[4.2], 37.0).unwrap(), 4.2);
        assert_eq!(percentile(&[3.0; 7], 90.0).unwrap(), 3.0);
        assert!(percentile(&[], 90.0).is_err());
    }

    proptest! {
        #[test]
        fn percentile_matches_sort_oracle(v in prop::collection::vec(-1e3f64..1e3, 1..1000), p in 0.0f64..=100.0) {
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = p / 100.0 * (s.len() - 1) as f64;
            let i = pos as usize;
            let expect = if i + 1 < s.len() { s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64) } else { s[i] };
            prop_assert!((percentile(&v, p).unwrap() - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }

        #[test]
        fn summary_permutation_invariant(v in prop::collection::vec(900.0f64..1100.0, 2..200), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let samples: Vec<ErrorSample> = v.iter().enumerate().map(|(i, &e)| ErrorSample { t: i as f64, reference: 1000.0, estimate: e }).collect();
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = summarize_samples(&samples, Quantity::ZeroAoASpeed, Stage::Raw).unwrap();
            let b = summarize_samples(&shuffled, Quantity::ZeroAoASpeed, Stage::Raw).unwrap();
            prop_assert!((a.mean_abs - b.mean_abs).abs() < 1e-9);
            prop_assert_eq!(a.p90_abs, b.p90_abs);
            prop_assert_eq!(a.max_abs, b.max_abs);
        }

        #[test]
        fn relative_is_abs_over_reference(r in 1.0f64..2000.0, e in 0.0f64..2000.0) {
            prop_assert!((rel_error(r, e).unwrap() - 100.0 * abs_error(r, e) / r).abs() < 1e-9);
        }

        #[test]
        fn median_filter_bounds_max_error(base in prop::collection::vec(-1.0f64..1.0, 36), outliers in prop::collection::vec((0usize..36, 10.0f64..100.0), 0..12)) {
            // At most two outliers per block of six: the block median stays
            // inside the clean values, so filtered max <= raw max.
            let mut v: Vec<f64> = base.iter().map(|x| 1000.0 + x).collect();
            let mut per_block = [0; 6];
            for (i, o) in outliers {
                if per_block[i / 6] < 2 {
                    per_block[i / 6] += 1;
                    v[i] += o;
                }
            }
            let l = log(&v, 1000.0);
            let raw = summarize_samples(&error_samples(&l, Stage::Raw, Quantity::ZeroAoASpeed).unwrap(), Quantity::ZeroAoASpeed, Stage::Raw).unwrap();
            let med = summarize_samples(&error_samples(&l, Stage::MedianFiltered, Quantity::ZeroAoASpeed).unwrap(), Quantity::ZeroAoASpeed, Stage::MedianFiltered).unwrap();
            prop_assert!(med.max_abs <= raw.max_abs);
        }
    }

    #[test]
    fn exact_estimates_give_zero_summary() {
        let l = log(&[1000.0; 12], 1000.0);
        for stage in [Stage::Raw, Stage::MedianFiltered] {
            let s = summarize(std::slice::from_ref(&l), stage, Quantity::ZeroAoASpeed).unwrap();
            let p = s.pooled[0].1;
            assert_eq!((p.mean_abs, p.p90_abs, p.max_abs, p.mean_rel), (0.0, 0.0, 0.0, Some(0.0)));
        }
    }

    #[test]
    fn residual_example() {
        // residuals -1, 0, +1, +2
        let l = log(&[999.0, 1000.0, 1001.0, 1002.0], 1000.0);
        let s = summarize(&[l], Stage::Raw, Quantity::ZeroAoASpeed).unwrap().per_run[0].summary;
        assert_eq!(s.mean_abs, 1.0);
        assert_eq!(s.max_abs, 2.0);
        assert!((s.p90_abs - percentile(&[1.0, 0.0, 1.0, 2.0], 90.0).unwrap()).abs() < 1e-12);
        assert!((s.p90_abs - 1.7).abs() < 1e-12);
    }

    #[test]
    fn median_removes_single_outlier() {
        let l = log(&[1000.0, 1000.0, 1100.0, 1000.0, 1000.0, 1000.0], 1000.0);
        let raw = summarize(std::slice::from_ref(&l), Stage::Raw, Quantity::ZeroAoASpeed).unwrap();
        let med = summarize(&[l], Stage::MedianFiltered, Quantity::ZeroAoASpeed).unwrap();
        assert_eq!(raw.pooled[0].1.max_abs, 100.0);
        assert_eq!(med.pooled[0].1.max_abs, 0.0);
        assert_eq!(med.pooled[0].1.n, 1);
    }

    #[test]
    fn filter_respects_segments() {
        let mut l = log(&[1000.0; 14], 1000.0);
        // Seven windows in each of two segments with a gap between them.
        l.segments = (0..14).map(|i| i / 7).collect();
        l.times = (0..14).map(|i| 0.008 + 0.016 * i as f64 + if i >= 7 { 1.0 } else { 0.0 }).collect();
        let s = error_samples(&l, Stage::MedianFiltered, Quantity::ZeroAoASpeed).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[0].t - (0.008 + 0.016 * 2.5)).abs() < 1e-12);
        assert!((s[1].t - (1.008 + 0.016 * 9.5)).abs() < 1e-12);
    }

    #[test]
    fn two_output_quantities() {
        let v = crate::domain::body_components(crate::domain::FlowState { speed: 1000.0, aoa: 6.0 }).unwrap();
        let mut l = log(&[0.0; 6], 1000.0);
        l.predicted = vec![vec![v.vx, v.vy]; 6];
        l.reference = vec![vec![v.vx, v.vy]; 6];
        l.track.aoa = TimeSeries::new(0.0, 0.01, vec![6.0; 100]).unwrap();
        for q in [Quantity::Aoa, Quantity::SpeedMagnitude] {
            for stage in [Stage::Raw, Stage::MedianFiltered] {
                let s = summarize(std::slice::from_ref(&l), stage, q).unwrap().pooled[0].1;
                assert!(s.max_abs < 1e-9, "{q:?} {stage:?} {}", s.max_abs);
            }
        }
        assert!(matches!(error_samples(&l, Stage::Raw, Quantity::ZeroAoASpeed), Err(Error::Shape(_))));
        let one = log(&[1.0; 6], 1.0);
        assert!(summarize(&[l, one], Stage::Raw, Quantity::Aoa).is_err());
    }

    fn entries(f: impl Fn(f64, usize, bool) -> f64) -> Vec<SweepEntry> {
        let mut out = Vec::new();
        for i in 1..=5 {
            let fraction = i as f64 / 10.0;
            for retrain in 0..3 {
                for (run, tv) in [("Z-1", false), ("Z-4", true)] {
                    out.push(SweepEntry { fraction, retrain, run_label: run.into(), time_varying: tv, mean_err: f(fraction, retrain, tv) });
                }
            }
        }
        out
    }

    #[test]
    fn sweep_report_and_trends() {
        let fr: Vec<f64> = (1..=5).map(|i| i as f64 / 10.0).collect();
        let e = entries(|f, r, tv| if tv { 2.0 + 10.0 * f + r as f64 * 0.1 } else { 2.0 + r as f64 * 0.5 });
        let rows = holdout_sweep_report(&e, &fr).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(!rows[0].time_varying && rows[9].time_varying);
        assert!((rows[0].sigma - 0.5).abs() < 1e-12);
        let flat = group_trend(&rows, false).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!((flat.sigma_band - 0.5).abs() < 1e-12);
        let rising = group_trend(&rows, true).unwrap();
        assert!((rising.slope - 10.0).abs() < 1e-9);
        assert_eq!(rising.rising_retrains(), (3, 3));

        let same = entries(|f, _, _| f);
        assert!(holdout_sweep_report(&same, &fr).unwrap().iter().all(|r| r.sigma < 1e-15));
        let missing: Vec<SweepEntry> = e.iter().filter(|x| x.fraction != 0.3).cloned().collect();
        assert!(holdout_sweep_report(&missing, &fr).is_err());
    }

    #[test]
    fn csv_shapes() {
        let l = log(&[999.0, 1000.0, 1001.0, 1002.0, 1000.0, 1000.0, 1000.5], 1000.0);
        let s = summarize(std::slice::from_ref(&l), Stage::Raw, Quantity::ZeroAoASpeed).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &["seed = 1".into()], &s.pooled, &[Split::Test]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# seed = 1\nsplit,quantity,stage,n,"));
        assert_eq!(text.lines().count(), 2 + 6);
        let mut buf = Vec::new();
        write_timeseries_csv(&mut buf, &[], &[l]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 7);
        // The first six windows form one block (median 1000); the seventh has none.
        assert!(rows[0].ends_with(",1000"));
        assert!(rows[6].ends_with(','));
    }
}
