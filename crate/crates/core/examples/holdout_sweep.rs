//! Holdout sweep on the zero angle-of-attack runs: retrain at each withheld
//! fraction and compare the error trend of constant and varying runs.
//!
//! Pass the number of retrains as the first argument (default 2). Each fit
//! takes a minute or two on one core.

use vibroflow::cli::{cmd_simulate, cmd_sweep, ExperimentConfig, Overrides, Task};
use vibroflow::eval::group_trend;

fn main() -> vibroflow::Result<()> {
    let retrains: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let ov = Overrides {
        desk_scale: true,
        runs: Some(vec!["all-zero-aoa".into()]),
        out: Some("out-example".into()),
        ..Overrides::default()
    };
    let mut cfg = ExperimentConfig::resolve(None, &ov)?;
    cfg.sweep.retrains = retrains;
    cmd_simulate(&cfg, true)?;
    let out = cmd_sweep(&cfg, Task::ZeroAoa, true)?;
    for r in &out.rows {
        println!("{:.1} {:<5} {:>8.3} ± {:.3} m/s", r.fraction, r.run_label, r.mean_err, r.sigma);
    }
    for (tv, name) in [(false, "constant"), (true, "varying")] {
        let g = group_trend(&out.rows, tv)?;
        let (up, n) = g.rising_retrains();
        println!("{name:>8}: slope {:+.3} m/s per unit fraction, sigma {:.3}, 50% >= 10% in {up} of {n}", g.slope, g.sigma_band);
    }
    Ok(())
}
