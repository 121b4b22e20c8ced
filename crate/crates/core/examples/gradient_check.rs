//! Analytic gradient of the small network against central differences.
//!
//! Max-pooling and the leaky ReLU make the loss only piecewise smooth, so a
//! few coordinates can disagree when the ±h stencil crosses a switch; the
//! printout marks those using the branch signature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vibroflow::cnn::{backward, branch_signature, init_params, predict, ModelConfig, ModelState, NormStats};
use vibroflow::dataset::SensorView;

fn main() -> vibroflow::Result<()> {
    let config = ModelConfig::tiny().with_head(2);
    let state = init_params(&config, 11)?;
    let stats = NormStats::identity(config.in_sensors, 2);
    let n_t = 160;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<Vec<f32>> = (0..3).map(|_| (0..4 * n_t).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let views: Vec<SensorView<'_>> = data.iter().map(|d| SensorView::new(d, 4, n_t, 0, n_t)).collect::<Result<_, _>>()?;
    let targets = vec![vec![0.5, -0.25]; 3];

    let loss = |theta: &[f64]| -> vibroflow::Result<f64> {
        let s = ModelState { config: config.clone(), theta: theta.to_vec() };
        let p = predict(&s, &stats, &views)?;
        Ok(p.iter().zip(&targets).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y))).sum::<f64>() / 6.0)
    };
    let signature = |theta: &[f64]| -> vibroflow::Result<Vec<Vec<u32>>> {
        let s = ModelState { config: config.clone(), theta: theta.to_vec() };
        views.iter().map(|v| branch_signature(&s, &stats, v)).collect()
    };

    let (l0, grad) = backward(&state, &stats, &views, &targets)?;
    println!("loss {l0:.6}, {} parameters", grad.len());
    let base = signature(&state.theta)?;
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut kinked = 0;
    let mut theta = state.theta.clone();
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let (up, sig_up) = (loss(&theta)?, signature(&theta)?);
        theta[i] = orig - h;
        let (down, sig_down) = (loss(&theta)?, signature(&theta)?);
        theta[i] = orig;
        if sig_up != base || sig_down != base {
            kinked += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs());
        if scale > 1e-10 {
            worst = worst.max((fd - grad[i]).abs() / scale);
        }
    }
    println!("max relative discrepancy {worst:.2e} over smooth coordinates; {kinked} stencils crossed a switch");
    Ok(())
}
