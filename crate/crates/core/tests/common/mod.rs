#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vibroflow::cnn::{backward, branch_signature, init_params, predict, ModelConfig, ModelState, NormStats};
use vibroflow::dataset::SensorView;

/// A gradient-check problem: parameters, statistics, input windows, targets.
pub struct Instance {
    pub state: ModelState,
    pub stats: NormStats,
    pub n_t: usize,
    pub data: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f64>>,
}

impl Instance {
    /// Glorot init plus a uniform jitter on every parameter, so biases and
    /// norm shifts are away from zero; non-trivial input statistics.
    pub fn random(config: &ModelConfig, n_windows: usize, n_t: usize, seed: u64) -> Self {
        let mut state = init_params(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for v in &mut state.theta {
            *v += rng.gen_range(-0.1..0.1);
        }
        let s = config.in_sensors;
        let k = config.head_out;
        let mut stats = NormStats::identity(s, k);
        for i in 0..s {
            stats.sensor_mean[i] = rng.gen_range(-0.3..0.3);
            stats.sensor_std[i] = rng.gen_range(0.7..1.3);
        }
        for j in 0..k {
            stats.target_offset[j] = rng.gen_range(-1.0..1.0);
            stats.target_scale[j] = rng.gen_range(0.5..2.0);
        }
        let data = (0..n_windows).map(|_| (0..s * n_t).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
        let targets = (0..n_windows).map(|_| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        Self { state, stats, n_t, data, targets }
    }

    pub fn views(&self) -> Vec<SensorView<'_>> {
        let s = self.state.config.in_sensors;
        self.data.iter().map(|d| SensorView::new(d, s, self.n_t, 0, self.n_t).unwrap()).collect()
    }

    /// Mean squared error from forward passes only.
    pub fn loss_at(&self, theta: &[f64]) -> f64 {
        let s = ModelState { config: self.state.config.clone(), theta: theta.to_vec() };
        let preds = predict(&s, &self.stats, &self.views()).unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for (p, t) in preds.iter().zip(&self.targets) {
            for (a, b) in p.iter().zip(t) {
                sum += (a - b) * (a - b);
                n += 1;
            }
        }
        sum / n as f64
    }

    pub fn gradient(&self) -> Vec<f64> {
        backward(&self.state, &self.stats, &self.views(), &self.targets).unwrap().1
    }

    fn signature(&self, theta: &[f64]) -> Vec<Vec<u32>> {
        let s = ModelState { config: self.state.config.clone(), theta: theta.to_vec() };
        self.views().iter().map(|v| branch_signature(&s, &self.stats, v).unwrap()).collect()
    }

    /// Coordinates whose `±h` perturbation moves some max-pool selection or
    /// leaky-ReLU sign, i.e. where the loss is not smooth over the
    /// finite-difference stencil and central differences are not an oracle.
    pub fn kinked_coords(&self, coords: &[usize], h: f64) -> Vec<usize> {
        let base = self.signature(&self.state.theta);
        let mut theta = self.state.theta.clone();
        coords
            .iter()
            .copied()
            .filter(|&i| {
                let orig = theta[i];
                let hit = [h, -h].iter().any(|d| {
                    theta[i] = orig + d;
                    self.signature(&theta) != base
                });
                theta[i] = orig;
                hit
            })
            .collect()
    }

    /// Central finite-difference derivatives of the loss at the listed coordinates.
    pub fn central_difference(&self, coords: &[usize], h: f64) -> Vec<f64> {
        let mut theta = self.state.theta.clone();
        coords
            .iter()
            .map(|&i| {
                let orig = theta[i];
                theta[i] = orig + h;
                let up = self.loss_at(&theta);
                theta[i] = orig - h;
                let down = self.loss_at(&theta);
                theta[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

/// First instance over successive seeds that is smooth over the stencil at
/// every listed coordinate, with the number of seeds rejected.
pub fn smooth_instance(
    config: &ModelConfig,
    n_windows: usize,
    n_t: usize,
    coords: impl Fn(&Instance) -> Vec<usize>,
    h: f64,
) -> (Instance, Vec<usize>, u64) {
    for seed in 0..64 {
        let inst = Instance::random(config, n_windows, n_t, 1000 + seed);
        let cs = coords(&inst);
        if inst.kinked_coords(&cs, h).is_empty() {
            return (inst, cs, seed);
        }
    }
    panic!("no kink-free instance among 64 seeds");
}

/// Largest `|a - b| / max(|a|, |b|)` over coordinates; pairs that are both
/// below 1e-10 in magnitude count as agreeing.
pub fn relative_discrepancy(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| {
            let scale = a.abs().max(b.abs());
            if scale < 1e-10 { 0.0 } else { (a - b).abs() / scale }
        })
        .fold(0.0, f64::max)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// A few coordinates from every parameter block of a model, chosen by seed.
pub fn sampled_coords(config: &ModelConfig, per_block: usize, seed: u64) -> Vec<usize> {
    let taps = config.kernel.0 * config.kernel.1;
    let mut blocks = Vec::new();
    let mut at = 0;
    let mut c_in = 1;
    for &c in &config.stage_channels {
        for len in [c * c_in * taps, c, c, c] {
            blocks.push(at..at + len);
            at += len;
        }
        c_in = c;
    }
    let head = config.head_out * c_in * config.adaptive_pool_out.0 * config.adaptive_pool_out.1;
    blocks.push(at..at + head);
    blocks.push(at + head..at + head + config.head_out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = blocks
        .into_iter()
        .flat_map(|b| {
            let n = per_block.min(b.len());
            (0..n).map(|_| rng.gen_range(b.clone())).collect::<Vec<_>>()
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}
