//! Synthetic wind-tunnel campaign.
//!
//! Each run produces a sensor-array voltage record whose statistics depend on
//! the instantaneous flow state, plus facility-style reference channels at the
//! label rate. The generative model gives speed three cues (excitation power,
//! dominant band center, inter-sensor convective delay) and angle of attack one
//! (an amplitude tilt along the array). Positive angle of attack is taken as
//! the windward side: sensors toward the base get louder.

mod campaign;
mod file;
mod synth;

use serde::{Deserialize, Serialize};

pub use campaign::{campaign, default_campaign, AOA_SWEEP_PLATEAUS, AOA_SWEEP_RAMP_S};
pub use file::{read_run, write_run, GENERATOR_CHACHA8, RUN_MAGIC, RUN_VERSION};
pub use synth::synthesize_run;

use crate::error::{Error, Result};
use crate::signal::{lowpass_reference, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MachClass {
    M5,
    M8,
}

impl MachClass {
    /// Nominal freestream speed, m/s.
    pub fn nominal_speed(self) -> f64 {
        match self {
            MachClass::M5 => 800.0,
            MachClass::M8 => 1081.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReynoldsLevel {
    Low,
    Mid,
    High,
    HighToMid,
    MidToLow,
}

impl ReynoldsLevel {
    /// Speed as a fraction of the Mach-class nominal at the start and end of a run.
    pub fn speed_factors(self) -> (f64, f64) {
        const LOW: f64 = 0.97;
        const MID: f64 = 1.0;
        const HIGH: f64 = 1.03;
        match self {
            ReynoldsLevel::Low => (LOW, LOW),
            ReynoldsLevel::Mid => (MID, MID),
            ReynoldsLevel::High => (HIGH, HIGH),
            ReynoldsLevel::HighToMid => (HIGH, MID),
            ReynoldsLevel::MidToLow => (MID, LOW),
        }
    }
}

/// Piecewise-linear function of time given by `(t, value)` breakpoints with
/// strictly increasing `t`. Constant beyond the first and last breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub points: Vec<(f64, f64)>,
}

impl Profile {
    pub fn constant(v: f64) -> Self {
        Self { points: vec![(0.0, v)] }
    }

    pub fn linear(t0: f64, v0: f64, t1: f64, v1: f64) -> Self {
        Self { points: vec![(t0, v0), (t1, v1)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("profile needs at least one breakpoint"));
        }
        for w in self.points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid("profile breakpoints must have strictly increasing times"));
            }
        }
        if self.points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::invalid("profile breakpoints must be finite"));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        let last = p[p.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = p.partition_point(|&(ti, _)| ti <= t);
        let (t0, v0) = p[i - 1];
        let (t1, v1) = p[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Extremes over `[0, duration]`; piecewise-linear, so breakpoints suffice.
    pub fn range_over(&self, duration: f64) -> (f64, f64) {
        let mut lo = self.eval(0.0).min(self.eval(duration));
        let mut hi = self.eval(0.0).max(self.eval(duration));
        for &(t, v) in &self.points {
            if (0.0..=duration).contains(&t) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    pub fn is_constant_over(&self, duration: f64) -> bool {
        let (lo, hi) = self.range_over(duration);
        hi - lo == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub mach_class: MachClass,
    /// Seconds.
    pub duration: f64,
    /// m/s.
    pub speed_profile: Profile,
    /// Degrees.
    pub aoa_profile: Profile,
    pub reynolds_level: ReynoldsLevel,
    pub seed: u64,
}

impl RunSpec {
    pub const MAX_ABS_AOA: f64 = 9.0;

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid(format!("run {}: duration must be positive", self.label)));
        }
        self.speed_profile.validate()?;
        self.aoa_profile.validate()?;
        let (lo, _) = self.speed_profile.range_over(self.duration);
        if !(lo > 0.0) {
            return Err(Error::invalid(format!(
                "run {}: speed profile reaches {lo} m/s; the convective delay model needs speed > 0",
                self.label
            )));
        }
        let (alo, ahi) = self.aoa_profile.range_over(self.duration);
        if alo.abs().max(ahi.abs()) > Self::MAX_ABS_AOA + 1e-12 {
            return Err(Error::invalid(format!(
                "run {}: angle of attack must stay within ±{}°",
                self.label,
                Self::MAX_ABS_AOA
            )));
        }
        Ok(())
    }

    /// True when either speed or angle of attack changes during the run.
    pub fn is_time_varying(&self) -> bool {
        !(self.speed_profile.is_constant_over(self.duration) && self.aoa_profile.is_constant_over(self.duration))
    }

    pub fn is_zero_aoa(&self) -> bool {
        let (lo, hi) = self.aoa_profile.range_over(self.duration);
        lo == 0.0 && hi == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArraySpec {
    pub n_sensors: usize,
    /// Meters between adjacent sensors along the cone axis.
    pub sensor_pitch: f64,
    /// Hz.
    pub sensor_rate: f64,
    /// Hz.
    pub label_rate: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self { n_sensors: 48, sensor_pitch: 0.517 / 48.0, sensor_rate: 250_000.0, label_rate: 100.0 }
    }
}

impl ArraySpec {
    /// Reduced sample rate for fast verification; everything else unchanged.
    pub fn desk() -> Self {
        Self { sensor_rate: 25_000.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors < 2 {
            return Err(Error::invalid("array needs at least two sensors"));
        }
        if !(self.sensor_pitch > 0.0) {
            return Err(Error::invalid("sensor pitch must be positive"));
        }
        if !(self.label_rate > 0.0 && self.sensor_rate > 0.0) {
            return Err(Error::invalid("rates must be positive"));
        }
        let ratio = self.sensor_rate / self.label_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::invalid(format!(
                "sensor rate {} must be an integer multiple of label rate {}",
                self.sensor_rate, self.label_rate
            )));
        }
        Ok(())
    }

    pub fn samples_per_label(&self) -> usize {
        (self.sensor_rate / self.label_rate).round() as usize
    }

    pub fn n_samples(&self, duration: f64) -> usize {
        (duration * self.sensor_rate).round() as usize
    }

    pub fn n_labels(&self, duration: f64) -> usize {
        (duration * self.label_rate).round() as usize
    }

    /// Position along the array in `[-1, 1]`, nose to base.
    pub fn normalized_position(&self, sensor: usize) -> f64 {
        -1.0 + 2.0 * sensor as f64 / (self.n_sensors - 1) as f64
    }
}

/// Parameters of the surrogate excitation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationParams {
    /// RMS volts of the flow-driven signal at `reference_speed`.
    pub base_gain: f64,
    /// Speed at which the flow-driven signal has RMS `base_gain`, m/s.
    pub reference_speed: f64,
    /// Signal power scales as `(speed / reference_speed)^speed_exponent`.
    pub speed_exponent: f64,
    /// Convective speed as a fraction of freestream.
    pub convection_fraction: f64,
    /// Relative amplitude tilt along the array per degree of angle of attack.
    pub aoa_gradient_gain: f64,
    /// Dominant band center per unit speed, Hz per m/s.
    pub band_center_gain: f64,
    /// Bandwidth of the excitation band relative to its center.
    pub band_relative_width: f64,
    /// Share of the flow-driven power carried by the convecting component.
    pub shared_fraction: f64,
    /// Half-width of the band holding 90% of reference-speed fluctuations, m/s.
    pub label_noise_band90: f64,
    /// Mach 5 fluctuation amplitude relative to `label_noise_band90`.
    pub m5_fluctuation_scale: f64,
    /// Hold time of the piecewise-constant Mach 5 fluctuations, seconds.
    pub m5_hold_s: f64,
    /// Additive white sensor noise, volts RMS.
    pub sensor_noise_rms: f64,
}

impl Default for ExcitationParams {
    fn default() -> Self {
        Self {
            base_gain: 1.0,
            reference_speed: 1000.0,
            speed_exponent: 4.0,
            convection_fraction: 0.7,
            aoa_gradient_gain: 0.03,
            band_center_gain: 4.0,
            band_relative_width: 0.3,
            shared_fraction: 0.5,
            label_noise_band90: 1.3,
            m5_fluctuation_scale: 0.5,
            m5_hold_s: 0.25,
            sensor_noise_rms: 0.1,
        }
    }
}

impl ExcitationParams {
    pub fn validate(&self) -> Result<()> {
        let gains = [
            self.base_gain,
            self.speed_exponent,
            self.aoa_gradient_gain,
            self.band_center_gain,
            self.label_noise_band90,
            self.m5_fluctuation_scale,
            self.sensor_noise_rms,
        ];
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("excitation gains must be finite and non-negative"));
        }
        if !(self.convection_fraction > 0.0 && self.convection_fraction <= 1.0) {
            return Err(Error::invalid("convection fraction must lie in (0, 1]"));
        }
        if !(self.shared_fraction >= 0.0 && self.shared_fraction <= 1.0) {
            return Err(Error::invalid("shared fraction must lie in [0, 1]"));
        }
        if !(self.band_relative_width > 0.0 && self.reference_speed > 0.0 && self.m5_hold_s > 0.0) {
            return Err(Error::invalid("band width, reference speed and hold time must be positive"));
        }
        if self.aoa_gradient_gain * RunSpec::MAX_ABS_AOA >= 1.0 {
            return Err(Error::invalid("aoa gradient gain would flip the sign of the sensor amplitude"));
        }
        Ok(())
    }
}

/// One synthesized (or ingested) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub array: ArraySpec,
    /// Volts, sensor-major: row `i` is `sensors[i * n_samples..(i + 1) * n_samples]`.
    pub sensors: Vec<f32>,
    /// Facility-style speed estimate with fluctuations, m/s, at the label rate.
    pub ref_speed_raw: Vec<f64>,
    /// Degrees, at the label rate.
    pub ref_aoa: Vec<f64>,
    /// Simulator ground truth speed, m/s, at the label rate.
    pub true_speed: Vec<f64>,
}

impl RunRecord {
    pub fn n_samples(&self) -> usize {
        self.sensors.len() / self.array.n_sensors
    }

    pub fn sensor_row(&self, i: usize) -> &[f32] {
        let n = self.n_samples();
        &self.sensors[i * n..(i + 1) * n]
    }

    pub fn label_dt(&self) -> f64 {
        1.0 / self.array.label_rate
    }

    pub fn ref_speed_series(&self) -> TimeSeries {
        TimeSeries { t0: 0.0, dt: self.label_dt(), values: self.ref_speed_raw.clone() }
    }

    pub fn ref_aoa_series(&self) -> TimeSeries {
        TimeSeries { t0: 0.0, dt: self.label_dt(), values: self.ref_aoa.clone() }
    }

    /// Low-pass filtered reference speed: the label every error is measured against.
    pub fn filtered_speed(&self, window_s: f64) -> Result<TimeSeries> {
        lowpass_reference(&self.ref_speed_series(), window_s)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.array.n_samples(self.spec.duration);
        if self.sensors.len() != n * self.array.n_sensors {
            return Err(Error::invalid(format!(
                "sensor matrix has {} values, expected {} x {n}",
                self.sensors.len(),
                self.array.n_sensors
            )));
        }
        let l = self.array.n_labels(self.spec.duration);
        if self.ref_speed_raw.len() != l || self.ref_aoa.len() != l || self.true_speed.len() != l {
            return Err(Error::invalid(format!("reference channels must have {l} samples")));
        }
        Ok(())
    }
}
