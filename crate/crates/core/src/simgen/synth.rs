use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ArraySpec, ExcitationParams, MachClass, RunRecord, RunSpec};
use crate::error::Result;
use crate::signal::{lowpass_length, lowpass_reference, symmetric_band, TimeSeries, DEFAULT_LOWPASS_WINDOW_S};

// ChaCha stream layout under one run seed.
const STREAM_SHARED: u64 = 0;
const STREAM_REFERENCE: u64 = 1;
fn stream_local(sensor: usize) -> u64 {
    2 + 2 * sensor as u64
}
fn stream_noise(sensor: usize) -> u64 {
    3 + 2 * sensor as u64
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic in `(spec, array, exc)`; sensors are synthesized in parallel
/// from independent streams, so the thread count does not affect the result.
pub fn synthesize_run(spec: &RunSpec, array: &ArraySpec, exc: &ExcitationParams) -> Result<RunRecord> {
    spec.validate()?;
    array.validate()?;
    exc.validate()?;

    let fs = array.sensor_rate;
    let n = array.n_samples(spec.duration);
    let block = array.samples_per_label();

    let speed: Vec<f64> = (0..n).map(|i| spec.speed_profile.eval(i as f64 / fs)).collect();
    let aoa: Vec<f64> = (0..n).map(|i| spec.aoa_profile.eval(i as f64 / fs)).collect();
    let amplitude: Vec<f64> = speed
        .iter()
        .map(|v| exc.base_gain * (v / exc.reference_speed).powf(0.5 * exc.speed_exponent))
        .collect();
    // Convective delay between adjacent sensors, in samples.
    let pitch_delay: Vec<f64> =
        speed.iter().map(|v| array.sensor_pitch * fs / (exc.convection_fraction * v)).collect();

    let (v_min, _) = spec.speed_profile.range_over(spec.duration);
    let max_delay = (array.n_sensors - 1) as f64 * array.sensor_pitch * fs / (exc.convection_fraction * v_min);
    let lead = max_delay.ceil() as usize + LANCZOS_A + 2;

    let center_at = |t: f64| exc.band_center_gain * spec.speed_profile.eval(t.max(0.0));
    let shared = band_noise(
        &mut rng_for(spec.seed, STREAM_SHARED),
        n + lead,
        |i| center_at((i as f64 - lead as f64) / fs),
        fs,
        exc.band_relative_width,
        block,
    );
    let kernel = LanczosTable::new();

    let shared_w = exc.shared_fraction.sqrt();
    let local_w = (1.0 - exc.shared_fraction).sqrt();
    let mut sensors = vec![0f32; n * array.n_sensors];
    sensors.par_chunks_mut(n.max(1)).enumerate().for_each(|(s, row)| {
        let local = band_noise(
            &mut rng_for(spec.seed, stream_local(s)),
            n,
            |i| center_at(i as f64 / fs),
            fs,
            exc.band_relative_width,
            block,
        );
        let mut noise_rng = rng_for(spec.seed, stream_noise(s));
        let pos = array.normalized_position(s);
        for (i, out) in row.iter_mut().enumerate() {
            let tilt = 1.0 + exc.aoa_gradient_gain * aoa[i] * pos;
            let p = (i + lead) as f64 - s as f64 * pitch_delay[i];
            let convected = kernel.interpolate(&shared, p);
            let flow = amplitude[i] * tilt * (shared_w * convected + local_w * local[i]);
            let eps: f64 = StandardNormal.sample(&mut noise_rng);
            *out = (flow + exc.sensor_noise_rms * eps) as f32;
        }
    });

    let n_labels = array.n_labels(spec.duration);
    let label_t = |k: usize| k as f64 / array.label_rate;
    let true_speed: Vec<f64> = (0..n_labels).map(|k| spec.speed_profile.eval(label_t(k))).collect();
    let ref_aoa: Vec<f64> = (0..n_labels).map(|k| spec.aoa_profile.eval(label_t(k))).collect();
    let fluct = reference_fluctuations(spec, array, exc, n_labels);
    let ref_speed_raw = true_speed.iter().zip(&fluct).map(|(v, f)| v + f).collect();

    Ok(RunRecord { spec: spec.clone(), array: *array, sensors, ref_speed_raw, ref_aoa, true_speed })
}

/// Zero-mean facility-style fluctuations. Mach 8 runs get white fluctuations;
/// Mach 5 runs get smaller piecewise-constant ones. Either way the residual
/// about the default low-pass trajectory is scaled so its 90% band equals the
/// configured target.
fn reference_fluctuations(spec: &RunSpec, array: &ArraySpec, exc: &ExcitationParams, n: usize) -> Vec<f64> {
    let mut rng = rng_for(spec.seed, STREAM_REFERENCE);
    let (target, hold) = match spec.mach_class {
        MachClass::M8 => (exc.label_noise_band90, 1),
        MachClass::M5 => (
            exc.label_noise_band90 * exc.m5_fluctuation_scale,
            ((exc.m5_hold_s * array.label_rate).round() as usize).max(1),
        ),
    };
    let mut g = vec![0.0; n];
    for seg in g.chunks_mut(hold) {
        let v: f64 = StandardNormal.sample(&mut rng);
        seg.fill(v);
    }
    let mean = g.iter().sum::<f64>() / n.max(1) as f64;
    g.iter_mut().for_each(|x| *x -= mean);

    let dt = 1.0 / array.label_rate;
    let band = if n >= lowpass_length(DEFAULT_LOWPASS_WINDOW_S, dt) {
        let series = TimeSeries { t0: 0.0, dt, values: g.clone() };
        let smooth = lowpass_reference(&series, DEFAULT_LOWPASS_WINDOW_S).expect("window fits series");
        let resid: Vec<f64> = g.iter().zip(&smooth.values).map(|(a, b)| a - b).collect();
        symmetric_band(&resid, 0.9)
    } else {
        // Too short to filter: fall back to the Gaussian 90% quantile.
        1.644_853_626_951_472_2
    };
    let scale = if band > 0.0 { target / band } else { 0.0 };
    g.iter_mut().for_each(|x| *x *= scale);
    g
}

/// Unit-variance band-limited Gaussian noise from a time-varying two-pole
/// resonator. The band center `center_hz(i)` is re-sampled once per `block`.
fn band_noise<F>(rng: &mut ChaCha8Rng, len: usize, center_hz: F, fs: f64, rel_width: f64, block: usize) -> Vec<f64>
where
    F: Fn(usize) -> f64,
{
    let mut out = vec![0.0; len];
    if len == 0 {
        return out;
    }
    let mut filt = Resonator::new(center_hz(0), fs, rel_width);
    // Start from the stationary state of the first block's filter.
    for _ in 0..filt.settle_len() {
        let x: f64 = StandardNormal.sample(rng);
        filt.step(x);
    }
    let mut last_center = f64::NAN;
    for (b, chunk) in out.chunks_mut(block.max(1)).enumerate() {
        let c = center_hz(b * block + chunk.len() / 2);
        if c != last_center {
            filt.retune(c, fs, rel_width);
            last_center = c;
        }
        for y in chunk.iter_mut() {
            let x: f64 = StandardNormal.sample(rng);
            *y = filt.step(x);
        }
    }
    out
}

/// Constant-peak-gain band-pass biquad, normalized to unit output variance for
/// unit white input.
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(center: f64, fs: f64, rel_width: f64) -> Self {
        let mut r = Self { b0: 0.0, a1: 0.0, a2: 0.0, x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0 };
        r.retune(center, fs, rel_width);
        r
    }

    fn retune(&mut self, center: f64, fs: f64, rel_width: f64) {
        let w0 = 2.0 * std::f64::consts::PI * (center / fs).clamp(1e-6, 0.49);
        let alpha = w0.sin() * rel_width / 2.0;
        let a0 = 1.0 + alpha;
        self.b0 = alpha / a0;
        self.a1 = -2.0 * w0.cos() / a0;
        self.a2 = (1.0 - alpha) / a0;
        // Rescale the numerator so white input maps to unit variance.
        self.b0 /= self.impulse_energy(self.b0).sqrt();
    }

    fn settle_len(&self) -> usize {
        let r = self.a2.sqrt();
        ((1e-9f64.ln() / r.ln()).ceil() as usize).clamp(16, 200_000)
    }

    fn impulse_energy(&self, b0: f64) -> f64 {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        let mut energy = 0.0;
        for i in 0..self.settle_len() {
            let x = if i == 0 { 1.0 } else { 0.0 };
            let y = b0 * (x - x2) - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            energy += y * y;
        }
        energy
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * (x - self.x2) - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

const LANCZOS_A: usize = 6;
const LANCZOS_STEPS: usize = 1024;

/// Tabulated Lanczos kernel for fractional-delay reads of the convecting
/// component. Weights are normalized to unit DC gain.
struct LanczosTable {
    weights: Vec<[f64; 2 * LANCZOS_A]>,
}

impl LanczosTable {
    fn new() -> Self {
        let a = LANCZOS_A as f64;
        let sinc = |x: f64| {
            if x.abs() < 1e-12 {
                1.0
            } else {
                let px = std::f64::consts::PI * x;
                px.sin() / px
            }
        };
        let weights = (0..=LANCZOS_STEPS)
            .map(|f| {
                let frac = f as f64 / LANCZOS_STEPS as f64;
                let mut w = [0.0; 2 * LANCZOS_A];
                for (j, wj) in w.iter_mut().enumerate() {
                    let x = frac - (j as f64 - a + 1.0);
                    *wj = if x.abs() < a { sinc(x) * sinc(x / a) } else { 0.0 };
                }
                let sum: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= sum);
                w
            })
            .collect();
        Self { weights }
    }

    #[inline]
    fn interpolate(&self, x: &[f64], p: f64) -> f64 {
        let base = p.floor();
        let frac = p - base;
        let w = &self.weights[(frac * LANCZOS_STEPS as f64).round() as usize];
        let start = base as isize - LANCZOS_A as isize + 1;
        let mut acc = 0.0;
        for (j, wj) in w.iter().enumerate() {
            let idx = (start + j as isize).clamp(0, x.len() as isize - 1) as usize;
            acc += wj * x[idx];
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{campaign, Profile};

    fn short_spec(label: &str, duration: f64) -> RunSpec {
        let mut s = campaign(duration, 7).into_iter().find(|s| s.label == label).unwrap();
        s.duration = duration;
        s
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn resonator_unit_variance() {
        let mut rng = rng_for(3, 0);
        let x = band_noise(&mut rng, 200_000, |_| 4000.0, 25_000.0, 0.3, 250);
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn lanczos_reproduces_samples_and_dc() {
        let t = LanczosTable::new();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        for i in 10..50 {
            assert!((t.interpolate(&x, i as f64) - x[i]).abs() < 1e-12);
        }
        assert!((t.interpolate(&vec![2.0; 64], 20.37) - 2.0).abs() < 1e-12);
        // Band-limited tone at 0.2 cycles/sample, half-sample shift.
        let y = t.interpolate(&x, 30.5);
        assert!((y - (30.5f64 * 0.3).sin()).abs() < 0.01);
    }

    #[test]
    fn deterministic() {
        let spec = short_spec("NZ-1", 0.2);
        let a = synthesize_run(&spec, &ArraySpec::desk(), &ExcitationParams::default()).unwrap();
        let b = synthesize_run(&spec, &ArraySpec::desk(), &ExcitationParams::default()).unwrap();
        assert_eq!(a, b);
        a.check_invariants().unwrap();
        assert_eq!(a.n_samples(), 5000);
        assert_eq!(a.ref_aoa.len(), 20);
    }

    #[test]
    fn rejects_nonpositive_speed() {
        let mut spec = short_spec("Z-1", 0.1);
        spec.speed_profile = Profile::linear(0.0, 10.0, 0.1, 0.0);
        assert!(synthesize_run(&spec, &ArraySpec::desk(), &ExcitationParams::default()).is_err());
    }

    #[test]
    fn zero_aoa_has_flat_rms_profile() {
        let spec = short_spec("Z-2", 16.0);
        let r = synthesize_run(&spec, &ArraySpec::desk(), &ExcitationParams::default()).unwrap();
        let levels: Vec<f64> = (0..48).map(|s| rms(r.sensor_row(s))).collect();
        let mean = levels.iter().sum::<f64>() / 48.0;
        for (s, l) in levels.iter().enumerate() {
            assert!((l / mean - 1.0).abs() < 0.02, "sensor {s}: {l} vs {mean}");
        }
    }

    #[test]
    fn aoa_tilt_flips_with_sign() {
        let array = ArraySpec::desk();
        let exc = ExcitationParams::default();
        let mut spec = short_spec("NZ-4", 1.0);
        let mut ratio = |aoa: f64| {
            spec.aoa_profile = Profile::constant(aoa);
            let r = synthesize_run(&spec, &array, &exc).unwrap();
            rms(r.sensor_row(47)) / rms(r.sensor_row(0))
        };
        assert!(ratio(9.0) > 1.0);
        assert!(ratio(-9.0) < 1.0);
    }

    #[test]
    fn power_increases_with_speed() {
        let array = ArraySpec::desk();
        let exc = ExcitationParams::default();
        let mut spec = short_spec("Z-1", 0.5);
        let powers: Vec<f64> = [600.0, 900.0, 1100.0, 1300.0]
            .iter()
            .map(|&v| {
                spec.speed_profile = Profile::constant(v);
                let r = synthesize_run(&spec, &array, &exc).unwrap();
                (0..48).map(|s| rms(r.sensor_row(s)).powi(2)).sum::<f64>() / 48.0
            })
            .collect();
        assert!(powers.windows(2).all(|w| w[1] > w[0]), "{powers:?}");
    }

    #[test]
    fn fluctuations_zero_mean_and_calibrated() {
        let array = ArraySpec::desk();
        let exc = ExcitationParams::default();
        let spec = short_spec("Z-1", 16.0);
        let f = reference_fluctuations(&spec, &array, &exc, 1600);
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        assert!(mean.abs() < 1e-9);
        let m5 = short_spec("Z-6", 16.0);
        let g = reference_fluctuations(&m5, &array, &exc, 1600);
        // Held for 25 label samples at a time.
        assert!(g[..25].iter().all(|&v| v == g[0]));
        assert_ne!(g[24], g[25]);
    }
}
