//! Zero angle-of-attack study at reduced rate: simulate, train a one-output
//! model, evaluate raw and median-filtered errors per run.
//!
//! Takes a few minutes on one core. Output goes to `out-example/`.

use vibroflow::cli::{cmd_evaluate, cmd_simulate, cmd_train, ExperimentConfig, Overrides, Task};
use vibroflow::dataset::Split;
use vibroflow::eval::Stage;

fn main() -> vibroflow::Result<()> {
    let ov = Overrides {
        desk_scale: true,
        runs: Some(vec!["all-zero-aoa".into()]),
        out: Some("out-example".into()),
        ..Overrides::default()
    };
    let cfg = ExperimentConfig::resolve(None, &ov)?;
    cmd_simulate(&cfg, true)?;
    let trained = cmd_train(&cfg, Task::ZeroAoa, true)?;
    println!("best epoch {} (validation MSE {:.2})", trained.fitted.trace.best_epoch, trained.fitted.trace.best_val_loss());
    let ev = cmd_evaluate(&cfg, Task::ZeroAoa, None, true)?;
    println!("{:<5} {:<5} {:<16} {:>9} {:>9} {:>8}", "run", "split", "stage", "mean m/s", "p90 m/s", "mean %");
    for r in ev.per_run.iter().filter(|r| r.split == Split::Test) {
        let s = &r.summary;
        println!(
            "{:<5} {:<5} {:<16} {:>9.2} {:>9.2} {:>8.3}",
            r.run_label,
            r.split.name(),
            s.stage.name(),
            s.mean_abs,
            s.p90_abs,
            s.mean_rel.unwrap_or(f64::NAN)
        );
    }
    for (split, s) in ev.pooled.iter().filter(|(sp, _)| *sp == Split::Test) {
        let tag = if s.stage == Stage::Raw { "raw" } else { "filtered" };
        println!("pooled {} {tag}: mean {:.2} m/s, p90 {:.2} m/s, max {:.2} m/s", split.name(), s.mean_abs, s.p90_abs, s.max_abs);
    }
    Ok(())
}
