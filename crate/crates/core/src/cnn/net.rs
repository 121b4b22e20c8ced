use rayon::prelude::*;

use super::{Layout, ModelConfig, ModelState, NormStats, StageSlots};
use crate::dataset::SensorView;
use crate::error::{Error, Result};

/// Row-major `c = a * b + beta * c` with optional transposes of `a` and `b`.
/// `a` is m x k (or k x m when transposed), `b` is k x n (or n x k).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every element addressed by these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense activation map, channel-major then sensor then time.
#[derive(Debug, Clone)]
struct Map {
    c: usize,
    s: usize,
    t: usize,
    data: Vec<f64>,
}

struct StageCache {
    t_conv: usize,
    cols: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pre_act: Vec<f64>,
    argmax: Vec<u32>,
}

struct Trace {
    stages: Vec<StageCache>,
    last: Map,
    features: Vec<f64>,
}

fn check_finite(values: &[f64], layer: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer() })
    }
}

fn standardize(config: &ModelConfig, stats: &NormStats, window: &SensorView<'_>) -> Result<Map> {
    let s = config.in_sensors;
    if window.n_sensors() != s || stats.sensor_mean.len() != s {
        return Err(Error::Shape(format!(
            "model expects {s} sensors, window has {} and statistics {}",
            window.n_sensors(),
            stats.sensor_mean.len()
        )));
    }
    if stats.target_offset.len() != config.head_out {
        return Err(Error::Shape(format!(
            "model has {} outputs, target statistics {}",
            config.head_out,
            stats.target_offset.len()
        )));
    }
    let t = window.len();
    if config.stage_lengths(t).is_none() {
        return Err(Error::invalid(format!(
            "window of {t} samples is shorter than the model minimum {}",
            config.min_time_samples()
        )));
    }
    let mut data = Vec::with_capacity(s * t);
    for i in 0..s {
        let (m, sd) = (stats.sensor_mean[i], stats.sensor_std[i]);
        data.extend(window.row(i).iter().map(|&v| (v as f64 - m) / sd));
    }
    check_finite(&data, || "input standardization".into())?;
    Ok(Map { c: 1, s, t, data })
}

/// Unrolls kernel taps into rows: row `(ci, ks, kt)`, column `(s, t)`.
fn im2col(x: &Map, kernel: (usize, usize), t_conv: usize) -> Vec<f64> {
    let (kh, kw) = kernel;
    let pad = kh / 2;
    // Filled in order rather than zeroed first; the buffers are large enough
    // that the extra pass shows up in training time.
    let mut cols = Vec::with_capacity(x.c * kh * kw * x.s * t_conv);
    for ci in 0..x.c {
        for ks in 0..kh {
            for kt in 0..kw {
                for s in 0..x.s {
                    match (s + ks).checked_sub(pad).filter(|&v| v < x.s) {
                        Some(src) => cols.extend_from_slice(&x.data[(ci * x.s + src) * x.t + kt..][..t_conv]),
                        None => cols.resize(cols.len() + t_conv, 0.0),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], c: usize, s_len: usize, t_in: usize, kernel: (usize, usize), t_conv: usize) -> Vec<f64> {
    let (kh, kw) = kernel;
    let pad = kh / 2;
    let n = s_len * t_conv;
    let mut x = vec![0.0; c * s_len * t_in];
    for ci in 0..c {
        for ks in 0..kh {
            for kt in 0..kw {
                let row = &cols[((ci * kh + ks) * kw + kt) * n..][..n];
                for s in 0..s_len {
                    let Some(src) = (s + ks).checked_sub(pad).filter(|&v| v < s_len) else { continue };
                    let to = &mut x[(ci * s_len + src) * t_in + kt..][..t_conv];
                    for (d, v) in to.iter_mut().zip(&row[s * t_conv..(s + 1) * t_conv]) {
                        *d += v;
                    }
                }
            }
        }
    }
    x
}

/// Normalizes each channel group to zero mean and unit variance; returns
/// the normalized values and per-group inverse standard deviations.
pub(super) fn group_normalize(x: &[f64], channels: usize, groups: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let per_group = x.len() / groups;
    debug_assert_eq!(x.len() % channels, 0);
    let mut xhat = vec![0.0; x.len()];
    let mut inv = Vec::with_capacity(groups);
    for g in 0..groups {
        let seg = &x[g * per_group..(g + 1) * per_group];
        let n = per_group as f64;
        let mean = seg.iter().sum::<f64>() / n;
        let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + eps).sqrt();
        for (o, v) in xhat[g * per_group..(g + 1) * per_group].iter_mut().zip(seg) {
            *o = (v - mean) * r;
        }
        inv.push(r);
    }
    (xhat, inv)
}

fn run_stage(
    config: &ModelConfig,
    theta: &[f64],
    slots: &StageSlots,
    pool: usize,
    x: &Map,
    index: usize,
) -> Result<(Map, StageCache)> {
    let (kh, kw) = config.kernel;
    let t_conv = x.t - (kw - 1);
    let n = x.s * t_conv;
    let c = slots.c_out;
    let cols = im2col(x, config.kernel, t_conv);

    let mut conv = vec![0.0; c * n];
    for (co, row) in conv.chunks_exact_mut(n).enumerate() {
        row.fill(theta[slots.bias + co]);
    }
    gemm(c, slots.c_in * kh * kw, n, &theta[slots.weight..slots.bias], false, &cols, false, 1.0, &mut conv);
    check_finite(&conv, || format!("stage {} convolution", index + 1))?;

    let (xhat, inv_std) = group_normalize(&conv, c, config.norm_groups, config.norm_eps);
    drop(conv);
    let mut pre_act = xhat.clone();
    for (co, row) in pre_act.chunks_exact_mut(n).enumerate() {
        let (g, b) = (theta[slots.scale + co], theta[slots.shift + co]);
        for v in row {
            *v = g * *v + b;
        }
    }
    check_finite(&pre_act, || format!("stage {} group norm", index + 1))?;

    let slope = config.leaky_slope;
    let t_out = t_conv / pool;
    let mut out = vec![0.0; c * x.s * t_out];
    let mut argmax = vec![0u32; out.len()];
    for row in 0..c * x.s {
        let src = &pre_act[row * t_conv..(row + 1) * t_conv];
        for j in 0..t_out {
            let mut best = f64::NEG_INFINITY;
            let mut at = 0;
            for r in 0..pool {
                let y = src[j * pool + r];
                let a = if y > 0.0 { y } else { slope * y };
                if a > best {
                    best = a;
                    at = j * pool + r;
                }
            }
            out[row * t_out + j] = best;
            argmax[row * t_out + j] = at as u32;
        }
    }
    let cache = StageCache { t_conv, cols, xhat, inv_std, pre_act, argmax };
    Ok((Map { c, s: x.s, t: t_out, data: out }, cache))
}

/// PyTorch-style adaptive bin: `[floor(i*n/m), ceil((i+1)*n/m))`.
fn bin(i: usize, n: usize, m: usize) -> (usize, usize) {
    (i * n / m, ((i + 1) * n).div_ceil(m))
}

fn adaptive_pool(x: &Map, out: (usize, usize)) -> Vec<f64> {
    let (ho, wo) = out;
    let mut f = Vec::with_capacity(x.c * ho * wo);
    for c in 0..x.c {
        for i in 0..ho {
            let (s0, s1) = bin(i, x.s, ho);
            for j in 0..wo {
                let (t0, t1) = bin(j, x.t, wo);
                let mut acc = 0.0;
                for s in s0..s1 {
                    acc += x.data[(c * x.s + s) * x.t + t0..(c * x.s + s) * x.t + t1].iter().sum::<f64>();
                }
                f.push(acc / ((s1 - s0) * (t1 - t0)) as f64);
            }
        }
    }
    f
}

fn adaptive_pool_backward(d_feat: &[f64], like: &Map, out: (usize, usize)) -> Vec<f64> {
    let (ho, wo) = out;
    let mut dx = vec![0.0; like.data.len()];
    let mut k = 0;
    for c in 0..like.c {
        for i in 0..ho {
            let (s0, s1) = bin(i, like.s, ho);
            for j in 0..wo {
                let (t0, t1) = bin(j, like.t, wo);
                let g = d_feat[k] / ((s1 - s0) * (t1 - t0)) as f64;
                k += 1;
                for s in s0..s1 {
                    for v in &mut dx[(c * like.s + s) * like.t + t0..(c * like.s + s) * like.t + t1] {
                        *v += g;
                    }
                }
            }
        }
    }
    dx
}

/// Head output before target rescaling.
fn run(state: &ModelState, stats: &NormStats, window: &SensorView<'_>) -> Result<(Vec<f64>, Trace)> {
    let config = &state.config;
    let layout = Layout::new(config);
    let theta = &state.theta;
    let mut x = standardize(config, stats, window)?;
    let mut stages = Vec::with_capacity(layout.stages.len());
    for (i, (slots, &pool)) in layout.stages.iter().zip(&config.stage_time_pool).enumerate() {
        let (y, cache) = run_stage(config, theta, slots, pool, &x, i)?;
        stages.push(cache);
        x = y;
    }
    let features = adaptive_pool(&x, config.adaptive_pool_out);
    let k = config.head_out;
    let mut head: Vec<f64> = theta[layout.head_bias..layout.head_bias + k].to_vec();
    gemm(k, layout.features, 1, &theta[layout.head_weight..layout.head_bias], false, &features, false, 1.0, &mut head);
    check_finite(&head, || "head".into())?;
    Ok((head, Trace { stages, last: x, features }))
}

/// Network output for one window, in target units.
pub fn forward(state: &ModelState, stats: &NormStats, window: &SensorView<'_>) -> Result<Vec<f64>> {
    let (head, _) = run(state, stats, window)?;
    Ok(head.iter().enumerate().map(|(j, h)| h * stats.target_scale[j] + stats.target_offset[j]).collect())
}

/// Which side of every non-differentiable point the network sits on for this
/// window: the selected position of each max-pool and the sign of each
/// leaky-ReLU input. The loss is smooth in any parameter neighbourhood over
/// which the signature does not change.
pub fn branch_signature(state: &ModelState, stats: &NormStats, window: &SensorView<'_>) -> Result<Vec<u32>> {
    let (_, trace) = run(state, stats, window)?;
    let mut sig = Vec::new();
    for st in &trace.stages {
        sig.extend_from_slice(&st.argmax);
        sig.extend(st.pre_act.iter().map(|&y| u32::from(y > 0.0)));
    }
    Ok(sig)
}

/// Outputs for many windows, evaluated in parallel.
pub fn predict(state: &ModelState, stats: &NormStats, windows: &[SensorView<'_>]) -> Result<Vec<Vec<f64>>> {
    windows.par_iter().map(|w| forward(state, stats, w)).collect()
}

/// Accumulates into `grad` the gradient of `sum_j d_out[j] * head[j]`.
fn backprop(state: &ModelState, trace: Trace, d_head: &[f64], grad: &mut [f64]) {
    let config = &state.config;
    let layout = Layout::new(config);
    let theta = &state.theta;
    let k = config.head_out;
    let nf = layout.features;

    for (j, d) in d_head.iter().enumerate() {
        grad[layout.head_bias + j] += d;
        for (g, f) in grad[layout.head_weight + j * nf..][..nf].iter_mut().zip(&trace.features) {
            *g += d * f;
        }
    }
    let mut d_feat = vec![0.0; nf];
    gemm(nf, k, 1, &theta[layout.head_weight..layout.head_bias], true, d_head, false, 0.0, &mut d_feat);

    let mut d_x = adaptive_pool_backward(&d_feat, &trace.last, config.adaptive_pool_out);
    let s_len = trace.last.s;
    let (kh, kw) = config.kernel;
    let slope = config.leaky_slope;

    for (i, cache) in trace.stages.into_iter().enumerate().rev() {
        let slots = layout.stages[i];
        let c = slots.c_out;
        let t_conv = cache.t_conv;
        let t_out = cache.argmax.len() / (c * s_len);
        let n = s_len * t_conv;

        // Unpool and leaky ReLU.
        let mut d_pre = vec![0.0; c * n];
        for row in 0..c * s_len {
            for j in 0..t_out {
                let at = row * t_conv + cache.argmax[row * t_out + j] as usize;
                let y = cache.pre_act[at];
                d_pre[at] += d_x[row * t_out + j] * if y > 0.0 { 1.0 } else { slope };
            }
        }

        // Affine scale and shift.
        let mut d_hat = d_pre;
        for co in 0..c {
            let row = &mut d_hat[co * n..(co + 1) * n];
            let xh = &cache.xhat[co * n..(co + 1) * n];
            grad[slots.shift + co] += row.iter().sum::<f64>();
            grad[slots.scale + co] += row.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>();
            let g = theta[slots.scale + co];
            for v in row.iter_mut() {
                *v *= g;
            }
        }

        // Group normalization.
        let groups = config.norm_groups;
        let per_group = c * n / groups;
        let m = per_group as f64;
        let mut d_conv = d_hat;
        for g in 0..groups {
            let range = g * per_group..(g + 1) * per_group;
            let xh = &cache.xhat[range.clone()];
            let dh = &mut d_conv[range];
            let sum_d: f64 = dh.iter().sum();
            let sum_dx: f64 = dh.iter().zip(xh).map(|(d, x)| d * x).sum();
            let r = cache.inv_std[g];
            for (d, x) in dh.iter_mut().zip(xh) {
                *d = r * (*d - sum_d / m - x * sum_dx / m);
            }
        }

        // Convolution.
        let kdim = slots.c_in * kh * kw;
        for co in 0..c {
            grad[slots.bias + co] += d_conv[co * n..(co + 1) * n].iter().sum::<f64>();
        }
        gemm(c, n, kdim, &d_conv, false, &cache.cols, true, 1.0, &mut grad[slots.weight..slots.bias]);
        if i > 0 {
            let mut d_cols = vec![0.0; kdim * n];
            gemm(kdim, c, n, &theta[slots.weight..slots.bias], true, &d_conv, false, 0.0, &mut d_cols);
            let t_in = t_conv + kw - 1;
            d_x = col2im(&d_cols, slots.c_in, s_len, t_in, config.kernel, t_conv);
        }
    }
}

/// Mean squared error over the batch and outputs, in target units, with its
/// exact gradient. Windows are processed in parallel and reduced in batch order.
pub fn backward(
    state: &ModelState,
    stats: &NormStats,
    windows: &[SensorView<'_>],
    targets: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let k = state.config.head_out;
    if windows.is_empty() || windows.len() != targets.len() {
        return Err(Error::Shape(format!("{} windows with {} targets", windows.len(), targets.len())));
    }
    if let Some(t) = targets.iter().find(|t| t.len() != k) {
        return Err(Error::Shape(format!("target of length {} for a model with {k} outputs", t.len())));
    }
    let denom = (windows.len() * k) as f64;
    let m = state.theta.len();
    let parts: Vec<Result<(f64, Vec<f64>)>> = windows
        .par_iter()
        .zip(targets.par_iter())
        .map(|(w, y)| {
            let (head, trace) = run(state, stats, w)?;
            let mut loss = 0.0;
            let mut d_head = vec![0.0; k];
            for j in 0..k {
                let r = head[j] * stats.target_scale[j] + stats.target_offset[j] - y[j];
                loss += r * r;
                d_head[j] = 2.0 * r * stats.target_scale[j] / denom;
            }
            let mut grad = vec![0.0; m];
            backprop(state, trace, &d_head, &mut grad);
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; m];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let loss = loss / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: "loss".into() });
    }
    check_finite(&grad, || "gradient".into())?;
    Ok((loss, grad))
}
