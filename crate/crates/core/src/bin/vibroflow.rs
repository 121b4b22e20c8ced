use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vibroflow::cli::{cmd_evaluate, cmd_report, cmd_simulate, cmd_sweep, cmd_train, ExperimentConfig, Overrides, Task};
use vibroflow::eval::group_trend;
use vibroflow::Result;

#[derive(Parser)]
#[command(name = "vibroflow", version, about = "Flow-state estimation from vibration sensor arrays")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Synthesize the selected runs into <out>/runs.
    Simulate(Common),
    /// Fit the task model; writes checkpoint, trace and partition manifests.
    Train(Common),
    /// Error tables for the task checkpoint on train and test windows.
    Evaluate(Common),
    /// Retrain across withheld fractions and tabulate test-block errors.
    Sweep(Common),
    /// Print the resolved configuration and any result tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Print every default, documented, and exit.
        #[arg(long)]
        defaults: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated run labels, or all / all-zero-aoa / all-nonzero-aoa.
    #[arg(long, value_delimiter = ',')]
    runs: Option<Vec<String>>,
    #[arg(long, default_value = "zero_aoa")]
    task: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let ov = Overrides { runs: self.runs.clone(), seed: self.seed, desk_scale: self.desk_scale, out: self.out.clone() };
        ExperimentConfig::load(self.config.as_deref(), &ov)
    }

    fn task(&self) -> Result<Task> {
        Task::parse(&self.task)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Simulate(c) => {
            for p in cmd_simulate(&c.config()?, c.force)? {
                println!("wrote {}", p.display());
            }
        }
        Verb::Train(c) => {
            let out = cmd_train(&c.config()?, c.task()?, c.force)?;
            let t = &out.fitted.trace;
            println!(
                "best epoch {} of {}, validation MSE {:.4}; wrote {}",
                t.best_epoch,
                t.stopped_epoch,
                t.best_val_loss(),
                out.checkpoint.display()
            );
        }
        Verb::Evaluate(c) => {
            let out = cmd_evaluate(&c.config()?, c.task()?, None, c.force)?;
            println!("{:<6} {:<16} {:<16} {:>10} {:>10} {:>10}", "split", "quantity", "stage", "mean", "p90", "max");
            for (split, s) in &out.pooled {
                println!(
                    "{:<6} {:<16} {:<16} {:>10.3} {:>10.3} {:>10.3}",
                    split.name(),
                    s.quantity.name(),
                    s.stage.name(),
                    s.mean_abs,
                    s.p90_abs,
                    s.max_abs
                );
            }
        }
        Verb::Sweep(c) => {
            let out = cmd_sweep(&c.config()?, c.task()?, c.force)?;
            for r in &out.rows {
                println!("{:.2} {:<6} {:>9.3} ± {:.3}", r.fraction, r.run_label, r.mean_err, r.sigma);
            }
            for (tv, name) in [(false, "constant"), (true, "varying")] {
                if let Ok(g) = group_trend(&out.rows, tv) {
                    let (up, n) = g.rising_retrains();
                    println!("{name}: slope {:.3} per unit fraction, sigma band {:.3}, rising in {up}/{n} retrains", g.slope, g.sigma_band);
                }
            }
        }
        Verb::Report { common, defaults } => {
            if defaults {
                print!("{}", ExperimentConfig::defaults(common.desk_scale).render(true));
            } else {
                print!("{}", cmd_report(&common.config()?)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
