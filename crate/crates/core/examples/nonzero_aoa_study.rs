//! Nonzero angle-of-attack study at reduced rate: a two-output model of
//! body-frame components, reported as angle of attack and speed magnitude.
//!
//! Takes a few minutes on one core. Output goes to `out-example/`.

use vibroflow::cli::{cmd_evaluate, cmd_simulate, cmd_train, ExperimentConfig, Overrides, Task};
use vibroflow::dataset::Split;

fn main() -> vibroflow::Result<()> {
    let ov = Overrides {
        desk_scale: true,
        runs: Some(vec!["all-nonzero-aoa".into()]),
        out: Some("out-example".into()),
        ..Overrides::default()
    };
    let cfg = ExperimentConfig::resolve(None, &ov)?;
    cmd_simulate(&cfg, true)?;
    cmd_train(&cfg, Task::NonzeroAoa, true)?;
    let ev = cmd_evaluate(&cfg, Task::NonzeroAoa, None, true)?;
    for r in ev.per_run.iter().filter(|r| r.split == Split::Test) {
        let s = &r.summary;
        println!("{:<5} {:<16} {:<16} mean {:>8.3} p90 {:>8.3}", r.run_label, s.quantity.name(), s.stage.name(), s.mean_abs, s.p90_abs);
    }
    for (split, s) in &ev.pooled {
        println!("pooled {:<5} {:<16} {:<16} mean {:>8.3} p90 {:>8.3}", split.name(), s.quantity.name(), s.stage.name(), s.mean_abs, s.p90_abs);
    }
    Ok(())
}
