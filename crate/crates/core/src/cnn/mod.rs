//! Three-stage 2D convolutional regressor over the sensor x time plane.
//!
//! Per stage: 3x7 convolution (same padding across sensors, valid in time),
//! group normalization, leaky ReLU, max-pool along time. Then an adaptive
//! mean pool to a fixed grid and an affine head. Everything is f64.

mod checkpoint;
mod net;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SensorView, Window};
use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{backward, branch_signature, forward, predict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_sensors: usize,
    pub stage_channels: Vec<usize>,
    /// (sensor, time) extent; the sensor extent must be odd.
    pub kernel: (usize, usize),
    /// Max-pool width along time after each stage; 1 disables pooling.
    pub stage_time_pool: Vec<usize>,
    pub norm_groups: usize,
    pub leaky_slope: f64,
    /// (sensor, time) grid of the adaptive mean pool.
    pub adaptive_pool_out: (usize, usize),
    pub head_out: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_sensors: 48,
            stage_channels: vec![32, 64, 128],
            kernel: (3, 7),
            stage_time_pool: vec![4, 4, 1],
            norm_groups: 8,
            leaky_slope: 0.1,
            adaptive_pool_out: (4, 8),
            head_out: 2,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn with_head(mut self, k: usize) -> Self {
        self.head_out = k;
        self
    }

    /// Same topology with narrower stages, sized for single-machine runs of
    /// the reduced-rate profile.
    pub fn desk() -> Self {
        Self { stage_channels: vec![8, 16, 32], norm_groups: 4, ..Self::default() }
    }

    /// Four sensors, one stage of four channels.
    pub fn tiny() -> Self {
        Self {
            in_sensors: 4,
            stage_channels: vec![4],
            stage_time_pool: vec![4],
            norm_groups: 2,
            head_out: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.in_sensors == 0 || self.stage_channels.is_empty() {
            return fail("need at least one sensor and one stage".into());
        }
        if self.stage_time_pool.len() != self.stage_channels.len() {
            return fail(format!(
                "{} pool widths for {} stages",
                self.stage_time_pool.len(),
                self.stage_channels.len()
            ));
        }
        if self.kernel.0 == 0 || self.kernel.0 % 2 == 0 || self.kernel.1 == 0 {
            return fail(format!("kernel {:?} must be nonempty with an odd sensor extent", self.kernel));
        }
        if self.norm_groups == 0 || self.stage_channels.iter().any(|&c| c == 0 || c % self.norm_groups != 0) {
            return fail(format!("stage channels {:?} not divisible by {} groups", self.stage_channels, self.norm_groups));
        }
        if self.stage_time_pool.contains(&0) {
            return fail("pool widths must be at least 1".into());
        }
        if self.adaptive_pool_out.0 == 0 || self.adaptive_pool_out.1 == 0 {
            return fail("adaptive pool output must be at least 1x1".into());
        }
        if !(1..=2).contains(&self.head_out) {
            return fail(format!("head output {} must be 1 or 2", self.head_out));
        }
        if !(self.leaky_slope.is_finite() && self.norm_eps > 0.0) {
            return fail("leaky slope must be finite and norm epsilon positive".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }

    /// Convolution output length and pooled length of each stage.
    pub fn stage_lengths(&self, n_t: usize) -> Option<Vec<(usize, usize)>> {
        let mut t = n_t;
        let mut out = Vec::with_capacity(self.stage_channels.len());
        for &p in &self.stage_time_pool {
            let conv = t.checked_sub(self.kernel.1 - 1).filter(|&c| c > 0)?;
            t = conv / p;
            if t == 0 {
                return None;
            }
            out.push((conv, t));
        }
        Some(out)
    }

    /// Shortest window for which every stage yields a nonempty map.
    pub fn min_time_samples(&self) -> usize {
        let mut t = 1;
        for &p in self.stage_time_pool.iter().rev() {
            t = t * p + self.kernel.1 - 1;
        }
        t
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct StageSlots {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: usize,
    pub bias: usize,
    pub scale: usize,
    pub shift: usize,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub stages: Vec<StageSlots>,
    pub head_weight: usize,
    pub head_bias: usize,
    pub features: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let taps = c.kernel.0 * c.kernel.1;
        let mut at = 0;
        let mut c_in = 1;
        let mut stages = Vec::new();
        for &c_out in &c.stage_channels {
            let weight = at;
            let bias = weight + c_out * c_in * taps;
            let scale = bias + c_out;
            let shift = scale + c_out;
            at = shift + c_out;
            stages.push(StageSlots { c_in, c_out, weight, bias, scale, shift });
            c_in = c_out;
        }
        let features = c_in * c.adaptive_pool_out.0 * c.adaptive_pool_out.1;
        let head_weight = at;
        let head_bias = head_weight + c.head_out * features;
        Self { stages, head_weight, head_bias, features, total: head_bias + c.head_out }
    }
}

/// Free function form of [`ModelConfig::param_count`].
pub fn param_count(config: &ModelConfig) -> usize {
    config.param_count()
}

/// Per-sensor input standardization and per-output target scaling, both
/// estimated from training windows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub sensor_mean: Vec<f64>,
    pub sensor_std: Vec<f64>,
    /// The network predicts `(target - offset) / scale`.
    pub target_offset: Vec<f64>,
    pub target_scale: Vec<f64>,
}

impl NormStats {
    pub fn identity(n_sensors: usize, k: usize) -> Self {
        Self {
            sensor_mean: vec![0.0; n_sensors],
            sensor_std: vec![1.0; n_sensors],
            target_offset: vec![0.0; k],
            target_scale: vec![1.0; k],
        }
    }

    pub fn from_windows(windows: &[Window<'_>]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::invalid("no training windows for normalization"))?;
        let n_sensors = first.sensors.n_sensors();
        let k = first.label.len();
        let mut sum = vec![0.0; n_sensors];
        let mut sum_sq = vec![0.0; n_sensors];
        let mut count = 0usize;
        for w in windows {
            if w.sensors.n_sensors() != n_sensors || w.label.len() != k {
                return Err(Error::Shape("training windows disagree in shape".into()));
            }
            for s in 0..n_sensors {
                let (a, b) = w.sensors.row(s).iter().fold((0.0, 0.0), |(a, b), &v| {
                    let v = v as f64;
                    (a + v, b + v * v)
                });
                sum[s] += a;
                sum_sq[s] += b;
            }
            count += w.sensors.len();
        }
        let n = count as f64;
        let sensor_mean: Vec<f64> = sum.iter().map(|a| a / n).collect();
        let sensor_std = sum_sq
            .iter()
            .zip(&sensor_mean)
            .map(|(b, m)| (b / n - m * m).max(0.0).sqrt())
            .collect();

        let m = windows.len() as f64;
        let target_offset: Vec<f64> =
            (0..k).map(|j| windows.iter().map(|w| w.label[j]).sum::<f64>() / m).collect();
        let target_scale = (0..k)
            .map(|j| {
                let var = windows.iter().map(|w| (w.label[j] - target_offset[j]).powi(2)).sum::<f64>() / m;
                // A constant target keeps unit scale rather than dividing by zero.
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let stats = Self { sensor_mean, sensor_std, target_offset, target_scale };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sensor_mean.len() == self.sensor_std.len()
            && self.target_offset.len() == self.target_scale.len()
            && self.sensor_mean.iter().chain(&self.target_offset).all(|v| v.is_finite())
            && self.sensor_std.iter().chain(&self.target_scale).all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::invalid("normalization statistics must be finite with positive spreads"));
        }
        Ok(())
    }
}

/// Architecture plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub theta: Vec<f64>,
}

impl ModelState {
    pub fn new(config: ModelConfig, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if theta.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                theta.len(),
                config.param_count()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: format!("parameter {i}") });
        }
        Ok(Self { config, theta })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let n = config.param_count();
        Self::new(config, vec![0.0; n])
    }

    /// Network output for one window in target units.
    pub fn predict(&self, stats: &NormStats, window: &SensorView<'_>) -> Result<Vec<f64>> {
        forward(self, stats, window)
    }
}

/// Glorot-uniform weights, zero biases and shifts, unit norm scales.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    config.validate()?;
    let layout = Layout::new(config);
    let taps = config.kernel.0 * config.kernel.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; layout.total];
    let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in slice {
            *v = rng.gen_range(-a..a);
        }
    };
    for s in &layout.stages {
        fill(&mut theta[s.weight..s.bias], s.c_in * taps, s.c_out * taps);
        theta[s.scale..s.shift].fill(1.0);
    }
    fill(&mut theta[layout.head_weight..layout.head_bias], layout.features, config.head_out);
    ModelState::new(config.clone(), theta)
}
