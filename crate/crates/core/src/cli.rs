//! Experiment orchestration behind the `vibroflow` command: configuration,
//! and the simulate / train / evaluate / sweep / report verbs. Commands share
//! nothing but the output directory:
//!
//! ```text
//! <out>/runs/<label>.vsr
//! <out>/<task>/config.toml  model.vsck  trace.csv  manifests/<label>.txt
//! <out>/<task>/per_run_errors.csv  summary.csv  timeseries.csv
//! <out>/<task>/sweep.csv  sweep_members.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::cnn::{init_params, predict, read_checkpoint, write_checkpoint, ModelConfig};
use crate::dataset::{center_block_partition, default_labels, extract_windows, LabelSource, PartitionManifest, Split, SplitSpec, Window};
use crate::domain::EstimationTarget;
use crate::error::{Error, Result};
use crate::eval::{
    holdout_sweep_report, summarize, write_per_run_csv, write_summary_csv, write_sweep_csv, write_timeseries_csv,
    ErrorSample, PredictionLog, Quantity, Stage, SweepEntry, SweepRow,
};
use crate::io_util::atomic_write;
use crate::simgen::{campaign, read_run, synthesize_run, write_run, ArraySpec, ExcitationParams, RunRecord, RunSpec};
use crate::train::{fit, retrain_ensemble, Fitted, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    ZeroAoa,
    NonzeroAoa,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::ZeroAoa => "zero_aoa",
            Task::NonzeroAoa => "nonzero_aoa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero_aoa" => Ok(Task::ZeroAoa),
            "nonzero_aoa" => Ok(Task::NonzeroAoa),
            other => Err(Error::Config(format!("unknown task `{other}` (expected zero_aoa or nonzero_aoa)"))),
        }
    }

    pub fn target(self) -> EstimationTarget {
        match self {
            Task::ZeroAoa => EstimationTarget::ScalarSpeed,
            Task::NonzeroAoa => EstimationTarget::BodyComponents,
        }
    }

    /// Quantity reported by the holdout sweep.
    pub fn sweep_quantity(self) -> Quantity {
        match self {
            Task::ZeroAoa => Quantity::ZeroAoASpeed,
            Task::NonzeroAoa => Quantity::Aoa,
        }
    }

    pub fn includes(self, spec: &RunSpec) -> bool {
        spec.is_zero_aoa() == (self == Task::ZeroAoa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub seed: u64,
    pub desk_scale: bool,
    pub duration_s: f64,
    /// Run labels, or one of `all`, `all-zero-aoa`, `all-nonzero-aoa`.
    pub runs: Vec<String>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub retrains: usize,
    pub fractions: Vec<f64>,
    /// Explicit retrain seeds; empty means `train.seed + i`.
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn seeds(&self, base: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.retrains as u64).map(|i| base.wrapping_add(i)).collect()
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub array: ArraySpec,
    pub excitation: ExcitationParams,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub runs: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub desk_scale: bool,
    pub out: Option<PathBuf>,
}

const SECTIONS: [&str; 7] = ["experiment", "array", "excitation", "split", "model", "train", "sweep"];

/// Keys whose default is "unset" and therefore absent from the rendered defaults.
const OPTIONAL_KEYS: [(&str, &str); 2] = [("split", "eval_stride_s"), ("train", "batches_per_epoch")];

const DOCS: &[(&str, &str, &str)] = &[
    ("experiment", "seed", "global seed: campaign synthesis, and the fit seed unless train.seed is set"),
    ("experiment", "desk_scale", "reduced-rate profile: 25 kHz sensors, 4 s runs, narrower model, shorter training"),
    ("experiment", "duration_s", "run duration, seconds"),
    ("experiment", "runs", "run labels, or \"all\", \"all-zero-aoa\", \"all-nonzero-aoa\""),
    ("experiment", "out", "output directory"),
    ("array", "n_sensors", "sensor count along the cone"),
    ("array", "sensor_pitch", "meters between adjacent sensors"),
    ("array", "sensor_rate", "sensor sample rate, Hz"),
    ("array", "label_rate", "reference channel rate, Hz (must divide sensor_rate)"),
    ("excitation", "base_gain", "flow-driven RMS volts at reference_speed"),
    ("excitation", "reference_speed", "m/s"),
    ("excitation", "speed_exponent", "signal power ~ (speed/reference_speed)^exponent"),
    ("excitation", "convection_fraction", "convective speed / freestream speed"),
    ("excitation", "aoa_gradient_gain", "relative amplitude tilt along the array per degree"),
    ("excitation", "band_center_gain", "dominant band center, Hz per m/s"),
    ("excitation", "band_relative_width", "band width / band center"),
    ("excitation", "shared_fraction", "share of flow power in the convecting component"),
    ("excitation", "label_noise_band90", "half-width holding 90% of reference fluctuations, m/s"),
    ("excitation", "m5_fluctuation_scale", "Mach 5 fluctuation amplitude relative to the above"),
    ("excitation", "m5_hold_s", "hold time of Mach 5 fluctuations, seconds"),
    ("excitation", "sensor_noise_rms", "additive sensor noise, volts RMS"),
    ("split", "test_frac", "withheld center block, fraction of each run"),
    ("split", "val_frac", "validation share, split evenly either side of the test block"),
    ("split", "window_s", "window length, seconds"),
    ("split", "train_stride_s", "training window stride, seconds"),
    ("split", "eval_stride_s", "validation/reporting stride, seconds (default: window_s)"),
    ("model", "in_sensors", "input sensor rows"),
    ("model", "stage_channels", "output channels per convolution stage"),
    ("model", "kernel", "[sensor, time] kernel extent"),
    ("model", "stage_time_pool", "time max-pool factor per stage"),
    ("model", "norm_groups", "group-norm groups"),
    ("model", "leaky_slope", "negative slope of the leaky ReLU"),
    ("model", "adaptive_pool_out", "[sensor, time] adaptive mean-pool output"),
    ("model", "head_out", "ignored: the task fixes it (1 for zero_aoa, 2 for nonzero_aoa)"),
    ("model", "norm_eps", "group-norm epsilon"),
    ("train", "batch_size", "windows per step"),
    ("train", "learning_rate", "Adam step size"),
    ("train", "beta1", "Adam first-moment decay"),
    ("train", "beta2", "Adam second-moment decay"),
    ("train", "epsilon", "Adam epsilon"),
    ("train", "max_epochs", "epoch budget"),
    ("train", "patience", "epochs without validation improvement before stopping"),
    ("train", "seed", "initialization and shuffle seed"),
    ("train", "batches_per_epoch", "cap on steps per epoch (default: whole training set)"),
    ("sweep", "retrains", "fits per holdout fraction"),
    ("sweep", "fractions", "withheld fractions"),
    ("sweep", "seeds", "explicit retrain seeds; empty means train.seed + 0, 1, ..."),
];

fn merge(base: &mut Table, file: Table, section: Option<&str>) -> Result<()> {
    for (k, v) in file {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t, Some(&k))?,
            (Some(slot), v) => *slot = v,
            (None, v) => {
                let known = section.is_some_and(|s| OPTIONAL_KEYS.contains(&(s, k.as_str())));
                if !known {
                    let at = section.map(|s| format!("{s}.")).unwrap_or_default();
                    return Err(Error::Config(format!("unknown key `{at}{k}`")));
                }
                base.insert(k, v);
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Built-in values for the full-scale or desk-scale profile.
    pub fn defaults(desk: bool) -> Self {
        let (array, duration_s, model, train) = if desk {
            (ArraySpec::desk(), 4.0, ModelConfig::desk(), TrainConfig::desk())
        } else {
            (ArraySpec::default(), 16.0, ModelConfig::default(), TrainConfig::default())
        };
        let seed = 20_260_101;
        Self {
            experiment: ExperimentSection {
                seed,
                desk_scale: desk,
                duration_s,
                runs: vec!["all".into()],
                out: PathBuf::from("out"),
            },
            array,
            excitation: ExcitationParams::default(),
            split: SplitSpec::default(),
            model,
            train: TrainConfig { seed, ..train },
            sweep: SweepConfig { retrains: 5, fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5], seeds: Vec::new() },
        }
    }

    /// Profile defaults, then the file, then the command line.
    pub fn resolve(text: Option<&str>, ov: &Overrides) -> Result<Self> {
        let file: Table = match text {
            Some(t) => t.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => Table::new(),
        };
        let file_desk = file.get("experiment").and_then(|e| e.get("desk_scale")).and_then(Value::as_bool);
        let desk = ov.desk_scale || file_desk.unwrap_or(false);
        let train_seed_set = file.get("train").and_then(|t| t.get("seed")).is_some();
        let mut base = Table::try_from(Self::defaults(desk)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, file, None)?;
        let mut cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.experiment.desk_scale = desk;
        if let Some(seed) = ov.seed {
            cfg.experiment.seed = seed;
        }
        if !train_seed_set || ov.seed.is_some() {
            cfg.train.seed = cfg.experiment.seed;
        }
        if let Some(runs) = &ov.runs {
            cfg.experiment.runs = runs.clone();
        }
        if let Some(out) = &ov.out {
            cfg.experiment.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let text = path.map(fs::read_to_string).transpose()?;
        Self::resolve(text.as_deref(), ov)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.array.validate().map_err(cfg)?;
        self.excitation.validate().map_err(cfg)?;
        self.split.validate().map_err(cfg)?;
        self.model.validate().map_err(cfg)?;
        self.train.validate()?;
        if !(self.experiment.duration_s > 0.0) {
            return Err(Error::Config("experiment.duration_s must be positive".into()));
        }
        if self.sweep.fractions.is_empty() || self.sweep.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("sweep.fractions must be nonempty and inside (0, 1)".into()));
        }
        if self.sweep.seeds(0).len() < 2 {
            return Err(Error::Config("sweep needs at least two retrains".into()));
        }
        if self.model.in_sensors != self.array.n_sensors {
            return Err(Error::Config(format!(
                "model.in_sensors = {} but the array has {} sensors",
                self.model.in_sensors, self.array.n_sensors
            )));
        }
        self.selected_runs().map(|_| ())
    }

    /// Campaign specs selected by `experiment.runs`, in campaign order.
    pub fn selected_runs(&self) -> Result<Vec<RunSpec>> {
        let all = campaign(self.experiment.duration_s, self.experiment.seed);
        let mut keep = vec![false; all.len()];
        for sel in &self.experiment.runs {
            let hit: Vec<usize> = match sel.as_str() {
                "all" => (0..all.len()).collect(),
                "all-zero-aoa" => (0..all.len()).filter(|&i| all[i].is_zero_aoa()).collect(),
                "all-nonzero-aoa" => (0..all.len()).filter(|&i| !all[i].is_zero_aoa()).collect(),
                label => match all.iter().position(|s| s.label == label) {
                    Some(i) => vec![i],
                    None => return Err(Error::Config(format!("unknown run label `{label}`"))),
                },
            };
            hit.into_iter().for_each(|i| keep[i] = true);
        }
        Ok(all.into_iter().zip(keep).filter_map(|(s, k)| k.then_some(s)).collect())
    }

    /// TOML text of the resolved configuration, optionally with a comment per key.
    pub fn render(&self, documented: bool) -> String {
        let table = Table::try_from(self).expect("configuration serializes to TOML");
        let mut out = String::new();
        for section in SECTIONS {
            let Some(Value::Table(t)) = table.get(section) else { continue };
            let _ = writeln!(out, "[{section}]");
            for &(s, key, doc) in DOCS.iter().filter(|d| d.0 == section) {
                if documented {
                    let _ = writeln!(out, "# {doc}");
                }
                match t.get(key) {
                    Some(v) => {
                        let _ = writeln!(out, "{key} = {v}");
                    }
                    None if documented && OPTIONAL_KEYS.contains(&(s, key)) => {
                        let _ = writeln!(out, "# {key} = (unset)");
                    }
                    None => {}
                }
            }
            out.push('\n');
        }
        out
    }

    /// Comment lines embedded at the top of every results file.
    pub fn provenance(&self, task: Option<Task>) -> Vec<String> {
        let mut lines = vec![format!("vibroflow {}", env!("CARGO_PKG_VERSION"))];
        if let Some(t) = task {
            lines.push(format!("task = {}", t.name()));
        }
        lines.extend(self.render(false).lines().filter(|l| !l.is_empty()).map(str::to_string));
        lines
    }

    pub fn out_dir(&self) -> &Path {
        &self.experiment.out
    }

    pub fn run_path(&self, label: &str) -> PathBuf {
        self.experiment.out.join("runs").join(format!("{label}.vsr"))
    }

    pub fn task_dir(&self, task: Task) -> PathBuf {
        self.experiment.out.join(task.name())
    }

    pub fn checkpoint_path(&self, task: Task) -> PathBuf {
        self.task_dir(task).join("model.vsck")
    }

    fn task_model(&self, task: Task) -> ModelConfig {
        self.model.clone().with_head(task.target().dim())
    }
}

/// Refuses to proceed if any target exists and `force` is off; nothing is
/// written in that case.
fn guard_outputs(paths: &[PathBuf], force: bool) -> Result<()> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::AlreadyExists { path: p.clone() });
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Synthesizes every selected run into `<out>/runs`.
pub fn cmd_simulate(cfg: &ExperimentConfig, force: bool) -> Result<Vec<PathBuf>> {
    let specs = cfg.selected_runs()?;
    let paths: Vec<PathBuf> = specs.iter().map(|s| cfg.run_path(&s.label)).collect();
    guard_outputs(&paths, force)?;
    for (spec, path) in specs.iter().zip(&paths) {
        let record = synthesize_run(spec, &cfg.array, &cfg.excitation)?;
        write_run(&record, path)?;
    }
    Ok(paths)
}

/// Run files of the selected runs belonging to `task`.
pub fn load_task_runs(cfg: &ExperimentConfig, task: Task) -> Result<Vec<RunRecord>> {
    let specs: Vec<RunSpec> = cfg.selected_runs()?.into_iter().filter(|s| task.includes(s)).collect();
    if specs.is_empty() {
        return Err(Error::Config(format!("no selected runs belong to the {} task", task.name())));
    }
    specs
        .iter()
        .map(|s| {
            let path = cfg.run_path(&s.label);
            if !path.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} is missing; run `simulate` first", path.display()),
                )));
            }
            let rec = read_run(&path)?;
            if rec.array != cfg.array || rec.spec != *s {
                return Err(Error::Config(format!(
                    "{} was simulated with a different configuration; rerun `simulate --force`",
                    path.display()
                )));
            }
            Ok(rec)
        })
        .collect()
}

/// Windows of every run of a task under one split.
pub struct TaskWindows<'a> {
    pub train: Vec<Window<'a>>,
    pub validation: Vec<Window<'a>>,
    /// Per run: non-overlapping windows of the train ranges and of the test block.
    pub per_run: Vec<RunWindows<'a>>,
    pub manifests: Vec<PartitionManifest>,
}

pub struct RunWindows<'a> {
    pub record: &'a RunRecord,
    pub train_eval: Vec<Window<'a>>,
    pub test: Vec<Window<'a>>,
}

pub fn task_windows<'a>(
    records: &'a [RunRecord],
    labels: &[LabelSource],
    split: &SplitSpec,
    target: EstimationTarget,
) -> Result<TaskWindows<'a>> {
    split.validate()?;
    let mut out = TaskWindows { train: Vec::new(), validation: Vec::new(), per_run: Vec::new(), manifests: Vec::new() };
    for (rec, lab) in records.iter().zip(labels) {
        let p = center_block_partition(rec.spec.duration, rec.array.sensor_rate, split)?;
        let eval = split.eval_stride();
        out.train.extend(extract_windows(rec, lab, &p.train, split.train_stride_s, split.window_s, target)?);
        out.validation.extend(extract_windows(rec, lab, &p.validation, eval, split.window_s, target)?);
        out.per_run.push(RunWindows {
            record: rec,
            train_eval: extract_windows(rec, lab, &p.train, eval, split.window_s, target)?,
            test: extract_windows(rec, lab, &[p.test], eval, split.window_s, target)?,
        });
        out.manifests.push(PartitionManifest { run_label: rec.spec.label.clone(), split: *split, partition: p });
    }
    Ok(out)
}

fn labels_for(records: &[RunRecord]) -> Result<Vec<LabelSource>> {
    records.iter().map(default_labels).collect()
}

pub struct TrainOutcome {
    pub fitted: Fitted,
    pub checkpoint: PathBuf,
}

/// Fits the task model and writes the checkpoint, trace, partition manifests
/// and resolved configuration.
pub fn cmd_train(cfg: &ExperimentConfig, task: Task, force: bool) -> Result<TrainOutcome> {
    let dir = cfg.task_dir(task);
    let checkpoint = cfg.checkpoint_path(task);
    let trace_path = dir.join("trace.csv");
    guard_outputs(&[checkpoint.clone(), trace_path.clone()], force)?;
    let records = load_task_runs(cfg, task)?;
    let labels = labels_for(&records)?;
    let tw = task_windows(&records, &labels, &cfg.split, task.target())?;
    let model = cfg.task_model(task);
    let fitted = fit(init_params(&model, cfg.train.seed)?, &tw.train, &tw.validation, &cfg.train)?;

    write_text(&dir.join("config.toml"), &cfg.render(true))?;
    for m in &tw.manifests {
        write_text(&dir.join("manifests").join(format!("{}.txt", m.run_label)), &m.to_text())?;
    }
    write_checkpoint(&checkpoint, &fitted.state, &fitted.stats)?;
    let prov = cfg.provenance(Some(task));
    atomic_write(&trace_path, |w| fitted.trace.write_csv(w, &prov))?;
    Ok(TrainOutcome { fitted, checkpoint })
}

pub struct EvalOutcome {
    pub logs: Vec<PredictionLog>,
    pub per_run: Vec<crate::eval::RunSummary>,
    pub pooled: Vec<(Split, crate::eval::ErrorSummary)>,
}

/// Predictions of a trained model on the train and test windows of each run.
pub fn prediction_logs(
    fitted_state: &crate::cnn::ModelState,
    stats: &crate::cnn::NormStats,
    tw: &TaskWindows<'_>,
    labels: &[LabelSource],
) -> Result<Vec<PredictionLog>> {
    let mut logs = Vec::new();
    for (rw, lab) in tw.per_run.iter().zip(labels) {
        for (split, ws) in [(Split::Train, &rw.train_eval), (Split::Test, &rw.test)] {
            let views: Vec<_> = ws.iter().map(|w| w.sensors).collect();
            let pred = predict(fitted_state, stats, &views)?;
            logs.push(PredictionLog::from_windows(split, ws, pred, lab)?);
        }
    }
    Ok(logs)
}

/// Evaluates a checkpoint (by default the task's) and writes the error tables.
pub fn cmd_evaluate(cfg: &ExperimentConfig, task: Task, checkpoint: Option<&Path>, force: bool) -> Result<EvalOutcome> {
    let dir = cfg.task_dir(task);
    let outputs = ["per_run_errors.csv", "summary.csv", "timeseries.csv"].map(|f| dir.join(f));
    guard_outputs(&outputs, force)?;
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.checkpoint_path(task));
    if !ck.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is missing; run `train` first", ck.display()),
        )));
    }
    let (state, stats) = read_checkpoint(&ck)?;
    let k = task.target().dim();
    if state.config.head_out != k {
        return Err(Error::Shape(format!(
            "{} has {} outputs but the {} task needs {k}",
            ck.display(),
            state.config.head_out,
            task.name()
        )));
    }
    let records = load_task_runs(cfg, task)?;
    let labels = labels_for(&records)?;
    let tw = task_windows(&records, &labels, &cfg.split, task.target())?;
    let logs = prediction_logs(&state, &stats, &tw, &labels)?;

    let mut per_run = Vec::new();
    let mut pooled = Vec::new();
    for &q in Quantity::for_dim(k) {
        for stage in [Stage::Raw, Stage::MedianFiltered] {
            let s = summarize(&logs, stage, q)?;
            per_run.extend(s.per_run);
            pooled.extend(s.pooled);
        }
    }
    let prov = cfg.provenance(Some(task));
    atomic_write(&outputs[0], |w| write_per_run_csv(w, &prov, &per_run))?;
    atomic_write(&outputs[1], |w| write_summary_csv(w, &prov, &pooled, &[Split::Train, Split::Test]))?;
    atomic_write(&outputs[2], |w| write_timeseries_csv(w, &prov, &logs))?;
    Ok(EvalOutcome { logs, per_run, pooled })
}

pub struct SweepOutcome {
    pub entries: Vec<SweepEntry>,
    pub rows: Vec<SweepRow>,
}

fn mean_abs(samples: &[ErrorSample]) -> f64 {
    samples.iter().map(|s| (s.reference - s.estimate).abs()).sum::<f64>() / samples.len() as f64
}

/// Retrains at every holdout fraction and tabulates the mean raw error over
/// each run's withheld block.
pub fn cmd_sweep(cfg: &ExperimentConfig, task: Task, force: bool) -> Result<SweepOutcome> {
    let dir = cfg.task_dir(task);
    let outputs = [dir.join("sweep.csv"), dir.join("sweep_members.csv")];
    guard_outputs(&outputs, force)?;
    let records = load_task_runs(cfg, task)?;
    let labels = labels_for(&records)?;
    let model = cfg.task_model(task);
    let seeds = cfg.sweep.seeds(cfg.train.seed);
    let q = task.sweep_quantity();

    let mut entries = Vec::new();
    let mut members = Vec::new();
    for &fraction in &cfg.sweep.fractions {
        let split = SplitSpec { test_frac: fraction, ..cfg.split };
        let tw = task_windows(&records, &labels, &split, task.target())?;
        let fits = retrain_ensemble(&seeds, &model, &tw.train, &tw.validation, &cfg.train)?;
        for (retrain, f) in fits.iter().enumerate() {
            for (rw, lab) in tw.per_run.iter().zip(&labels) {
                let views: Vec<_> = rw.test.iter().map(|w| w.sensors).collect();
                let log = PredictionLog::from_windows(Split::Test, &rw.test, predict(&f.state, &f.stats, &views)?, lab)?;
                let err = mean_abs(&crate::eval::error_samples(&log, Stage::Raw, q)?);
                let spec = &rw.record.spec;
                members.push((fraction, retrain, f.seed, spec.label.clone(), spec.is_time_varying(), err));
                entries.push(SweepEntry {
                    fraction,
                    retrain,
                    run_label: spec.label.clone(),
                    time_varying: spec.is_time_varying(),
                    mean_err: err,
                });
            }
        }
    }
    let rows = holdout_sweep_report(&entries, &cfg.sweep.fractions)?;
    let prov = cfg.provenance(Some(task));
    atomic_write(&outputs[0], |w| write_sweep_csv(w, &prov, &rows))?;
    atomic_write(&outputs[1], |w| {
        for line in &prov {
            writeln!(w, "# {line}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fraction", "retrain", "seed", "run", "condition", "mean_err"])?;
        for (f, r, seed, run, tv, err) in &members {
            let cond = if *tv { "varying" } else { "constant" };
            out.write_record([f.to_string(), r.to_string(), seed.to_string(), run.clone(), cond.into(), err.to_string()])?;
        }
        out.flush()?;
        Ok(())
    })?;
    Ok(SweepOutcome { entries, rows })
}

/// The resolved configuration followed by whichever result tables exist.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# resolved configuration\n{}", cfg.render(false));
    for task in [Task::ZeroAoa, Task::NonzeroAoa] {
        for file in ["summary.csv", "sweep.csv"] {
            let path = cfg.task_dir(task).join(file);
            if let Ok(text) = fs::read_to_string(&path) {
                let _ = writeln!(out, "## {}", path.display());
                for line in text.lines().filter(|l| !l.starts_with('#')) {
                    let _ = writeln!(out, "{}", line.replace(',', "\t"));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_and_precedence() {
        let full = ExperimentConfig::resolve(None, &Overrides::default()).unwrap();
        assert_eq!(full.array.sensor_rate, 250_000.0);
        assert_eq!(full.selected_runs().unwrap().len(), 16);
        assert_eq!(full.train.seed, full.experiment.seed);

        let text = "[experiment]\ndesk_scale = true\nseed = 5\n[train]\nseed = 9\nlearning_rate = 0.01\n";
        let c = ExperimentConfig::resolve(Some(text), &Overrides::default()).unwrap();
        assert_eq!(c.array.sensor_rate, 25_000.0);
        assert_eq!(c.experiment.duration_s, 4.0);
        assert_eq!((c.experiment.seed, c.train.seed, c.train.learning_rate), (5, 9, 0.01));

        let ov = Overrides { seed: Some(77), runs: Some(vec!["Z-1".into()]), ..Overrides::default() };
        let c = ExperimentConfig::resolve(Some(text), &ov).unwrap();
        assert_eq!((c.experiment.seed, c.train.seed), (77, 77));
        assert_eq!(c.selected_runs().unwrap().len(), 1);
    }

    #[test]
    fn rejects_bad_files() {
        let ov = Overrides::default();
        assert!(matches!(ExperimentConfig::resolve(Some("[train]\nlearnin_rate = 1"), &ov), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::resolve(Some("[experiment]\nruns = [\"Z-99\"]"), &ov), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::resolve(Some("[train]\npatience = 0"), &ov), Err(Error::Config(_))));
        assert!(ExperimentConfig::resolve(Some("[train]\nbatches_per_epoch = 4"), &ov).is_ok());
    }

    #[test]
    fn rendered_defaults_parse_back() {
        for desk in [false, true] {
            let d = ExperimentConfig::defaults(desk);
            let text = d.render(true);
            let back = ExperimentConfig::resolve(Some(&text), &Overrides::default()).unwrap();
            assert_eq!(back, d);
            for (_, key, _) in DOCS {
                assert!(text.contains(key), "{key}");
            }
        }
    }

    #[test]
    fn selections() {
        let mut c = ExperimentConfig::defaults(true);
        c.experiment.runs = vec!["all-zero-aoa".into()];
        assert_eq!(c.selected_runs().unwrap().len(), 7);
        c.experiment.runs = vec!["all-nonzero-aoa".into(), "Z-2".into()];
        assert_eq!(c.selected_runs().unwrap().len(), 10);
    }
}
