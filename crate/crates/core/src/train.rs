//! Mini-batch training with validation early stopping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::{backward, init_params, predict, ModelConfig, ModelState, NormStats};
use crate::dataset::{SensorView, Window};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Caps the batches drawn per epoch; each epoch still reshuffles the
    /// whole training set, so successive epochs see different subsets.
    pub batches_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 2000,
            patience: 200,
            seed: 1,
            batches_per_epoch: None,
        }
    }
}

impl TrainConfig {
    /// Budget for the reduced-rate profile: small noisy batches, capped
    /// epochs so validation runs every `batches_per_epoch` steps.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 3e-3,
            max_epochs: 15,
            patience: 15,
            batches_per_epoch: Some(100),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return fail("patience must be in [1, max_epochs]");
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return fail("learning rate and epsilon must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("decay rates must lie in [0, 1)");
        }
        if self.batches_per_epoch == Some(0) {
            return fail("batches per epoch must be at least 1");
        }
        Ok(())
    }
}

/// Per-epoch losses, epochs numbered from 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainTrace {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss.get(self.best_epoch.wrapping_sub(1)).copied().unwrap_or(f64::NAN)
    }

    /// `epoch,train_loss,val_loss,is_best`, preceded by `# ` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &[String]) -> Result<()> {
        for line in provenance {
            writeln!(w, "# {line}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "is_best"])?;
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            let epoch = i + 1;
            out.write_record([
                epoch.to_string(),
                t.to_string(),
                v.to_string(),
                u8::from(epoch == self.best_epoch).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean over samples and components of the squared error.
pub fn mse_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if pred.len() != target.len() || pred.iter().zip(target).any(|(p, t)| p.len() != t.len()) {
        return Err(Error::Shape("prediction and target shapes differ".into()));
    }
    let n: usize = pred.iter().map(Vec::len).sum();
    let sum: f64 = pred.iter().zip(target).flat_map(|(p, t)| p.iter().zip(t)).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / n as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], c: &TrainConfig) {
        self.t += 1;
        let b1 = 1.0 - c.beta1.powi(self.t);
        let b2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / b1;
            let v_hat = self.v[i] / b2;
            theta[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
}

/// A trained model with the statistics it was trained under.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub state: ModelState,
    pub stats: NormStats,
    pub trace: TrainTrace,
    pub seed: u64,
}

fn split_windows<'a>(ws: &[Window<'a>]) -> (Vec<SensorView<'a>>, Vec<Vec<f64>>) {
    ws.iter().map(|w| (w.sensors, w.label.clone())).unzip()
}

pub fn validation_loss(state: &ModelState, stats: &NormStats, val: &[Window<'_>]) -> Result<f64> {
    let (views, targets) = split_windows(val);
    mse_loss(&predict(state, stats, &views)?, &targets)
}

/// Trains from `init` and returns the parameters of the epoch with the lowest
/// validation loss (earliest on ties). Normalization statistics come from
/// `train` alone.
pub fn fit(init: ModelState, train: &[Window<'_>], val: &[Window<'_>], config: &TrainConfig) -> Result<Fitted> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must both be nonempty"));
    }
    let stats = NormStats::from_windows(train)?;
    let (views, targets) = split_windows(train);
    let (val_views, val_targets) = split_windows(val);

    let mut state = init;
    let mut best = state.theta.clone();
    let mut adam = Adam::new(state.theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = TrainTrace::default();
    let mut best_loss = f64::INFINITY;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        if let Some(cap) = config.batches_per_epoch {
            batches.truncate(cap);
        }
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batches {
            let bv: Vec<SensorView<'_>> = batch.iter().map(|&i| views[i]).collect();
            let bt: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let (loss, grad) = match backward(&state, &stats, &bv, &bt) {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => {
                    trace.stopped_epoch = epoch;
                    return Err(Error::Diverged { epoch, trace: Box::new(trace) });
                }
                Err(e) => return Err(e),
            };
            adam.step(&mut state.theta, &grad, config);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = match predict(&state, &stats, &val_views) {
            Ok(p) => mse_loss(&p, &val_targets)?,
            Err(Error::NonFinite { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        trace.train_loss.push(train_loss);
        trace.val_loss.push(val_loss);
        trace.stopped_epoch = epoch;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Diverged { epoch, trace: Box::new(trace) });
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            trace.best_epoch = epoch;
            best.copy_from_slice(&state.theta);
        }
        if epoch - trace.best_epoch >= config.patience {
            break;
        }
    }
    state.theta = best;
    Ok(Fitted { state, stats, trace, seed: config.seed })
}

/// Independent fits differing only in seed (initialization and shuffles).
pub fn retrain_ensemble(
    seeds: &[u64],
    model: &ModelConfig,
    train: &[Window<'_>],
    val: &[Window<'_>],
    config: &TrainConfig,
) -> Result<Vec<Fitted>> {
    if seeds.len() < 2 {
        return Err(Error::invalid("an ensemble needs at least two members"));
    }
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            init_params(model, seed)
                .and_then(|init| fit(init, train, val, &cfg))
                .map_err(|e| Error::Member { seed, source: Box::new(e) })
        })
        .collect()
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SampleRange, TimeRange};
    use rand::Rng;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[vec![2.0]], &[vec![2.0]]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[vec![1.0], vec![-1.0]], &[vec![0.0], vec![0.0]]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[vec![3.0, 4.0]], &[vec![0.0, 0.0]]).unwrap(), 12.5);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn config_rules() {
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { patience: 10, max_epochs: 5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    fn toy(n: usize, seed: u64, target: impl Fn(usize, f64) -> f64) -> (Vec<f32>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * 4 * 128);
        let mut labels = Vec::new();
        for i in 0..n {
            let amp: f64 = rng.gen_range(0.5..2.0);
            for _ in 0..4 * 128 {
                data.push((amp * rng.gen_range(-1.0..1.0)) as f32);
            }
            labels.push(vec![target(i, amp)]);
        }
        (data, labels)
    }

    fn windows<'a>(data: &'a [f32], labels: &[Vec<f64>]) -> Vec<Window<'a>> {
        let per = 4 * 128;
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| Window {
                run_label: "toy",
                span: TimeRange { start: i as f64, end: i as f64 + 1.0 },
                samples: SampleRange { start: 0, end: 128 },
                segment: 0,
                sensors: SensorView::new(&data[i * per..(i + 1) * per], 4, 128, 0, 128).unwrap(),
                label: l.clone(),
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig { batch_size: 8, learning_rate: 3e-3, max_epochs: 60, patience: 60, seed: 9, ..TrainConfig::default() }
    }

    #[test]
    fn constant_target_fit() {
        let (d, l) = toy(32, 1, |_, _| 3.0);
        let tw = windows(&d, &l);
        let init = init_params(&ModelConfig::tiny(), 4).unwrap();
        let f = fit(init, &tw, &tw, &quick()).unwrap();
        assert_eq!(f.stats.target_offset, vec![3.0]);
        let views: Vec<_> = tw.iter().map(|w| w.sensors).collect();
        for out in predict(&f.state, &f.stats, &views).unwrap() {
            assert!((out[0] - 3.0).abs() < 0.1, "{out:?}");
        }
        assert!(f.trace.train_loss[49] < f.trace.train_loss[0]);
        assert!(*f.trace.train_loss.last().unwrap() < 1e-3);
    }

    #[test]
    fn learns_amplitude_and_is_reproducible() {
        let (d, l) = toy(64, 3, |_, a| 10.0 * a);
        let (vd, vl) = toy(16, 4, |_, a| 10.0 * a);
        let (tw, vw) = (windows(&d, &l), windows(&vd, &vl));
        let cfg = quick();
        let a = fit(init_params(&ModelConfig::tiny(), 4).unwrap(), &tw, &vw, &cfg).unwrap();
        let b = fit(init_params(&ModelConfig::tiny(), 4).unwrap(), &tw, &vw, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.state.theta, b.state.theta);
        // Baseline: predicting the mean label everywhere.
        let baseline = validation_loss(&ModelState::zeros(ModelConfig::tiny()).unwrap(), &a.stats, &vw).unwrap();
        assert!(a.trace.best_val_loss() < 0.5 * baseline, "{} vs {baseline}", a.trace.best_val_loss());

        let t = &a.trace;
        assert!(t.best_epoch <= t.stopped_epoch);
        let best = t.best_val_loss();
        assert!(t.val_loss.iter().all(|&v| v >= best));
        assert!(t.val_loss[..t.best_epoch - 1].iter().all(|&v| v > best));
    }

    #[test]
    fn early_stopping_law() {
        let (d, l) = toy(16, 5, |i, _| (i % 3) as f64);
        let (vd, vl) = toy(8, 6, |i, _| (i % 2) as f64);
        let (tw, vw) = (windows(&d, &l), windows(&vd, &vl));
        let cfg = TrainConfig { patience: 3, max_epochs: 200, ..quick() };
        let f = fit(init_params(&ModelConfig::tiny(), 1).unwrap(), &tw, &vw, &cfg).unwrap();
        let t = &f.trace;
        assert!(t.stopped_epoch < 200);
        assert_eq!(t.stopped_epoch - t.best_epoch, 3);
        assert_eq!(t.val_loss.len(), t.stopped_epoch);
        let restored = validation_loss(&f.state, &f.stats, &vw).unwrap();
        assert_eq!(restored, t.best_val_loss());
    }

    #[test]
    fn divergence_carries_trace() {
        let (d, l) = toy(16, 7, |_, a| a);
        let (tw, vw) = (windows(&d, &l), windows(&d, &l));
        let cfg = TrainConfig { learning_rate: 1e300, max_epochs: 20, patience: 20, ..quick() };
        match fit(init_params(&ModelConfig::tiny(), 1).unwrap(), &tw, &vw, &cfg) {
            Err(Error::Diverged { epoch, trace }) => {
                assert!(epoch >= 1);
                assert_eq!(trace.stopped_epoch, epoch);
            }
            other => panic!("expected divergence, got {:?}", other.map(|f| f.trace)),
        }
    }

    #[test]
    fn ensemble_members() {
        let (d, l) = toy(16, 8, |_, a| a);
        let (tw, vw) = (windows(&d, &l), windows(&d[..8 * 512], &l[..8]));
        let cfg = TrainConfig { max_epochs: 4, patience: 4, ..quick() };
        assert!(retrain_ensemble(&[1], &ModelConfig::tiny(), &tw, &vw, &cfg).is_err());
        let same = retrain_ensemble(&[5, 5], &ModelConfig::tiny(), &tw, &vw, &cfg).unwrap();
        assert_eq!(same[0].state, same[1].state);
        let diff = retrain_ensemble(&[1, 2, 3], &ModelConfig::tiny(), &tw, &vw, &cfg).unwrap();
        assert_eq!(diff.len(), 3);
        assert_ne!(diff[0].state.theta, diff[1].state.theta);
        let losses: Vec<f64> = diff.iter().map(|f| f.trace.best_val_loss()).collect();
        let (m, _) = mean_std(&losses);
        assert!(losses.iter().cloned().fold(f64::INFINITY, f64::min) <= m);
        assert!(losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= m);
        assert_eq!(mean_std(&[same[0].trace.best_val_loss(), same[1].trace.best_val_loss()]).1, 0.0);
    }

    #[test]
    fn trace_csv() {
        let t = TrainTrace { train_loss: vec![2.0, 1.0], val_loss: vec![1.5, 1.75], best_epoch: 1, stopped_epoch: 2 };
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &["seed = 1".into()]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "# seed = 1\nepoch,train_loss,val_loss,is_best\n1,2,1.5,1\n2,1,1.75,0\n");
    }
}
