use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use autowu::schedule::sweep_grid;
use autowu::synthgen::{evaluate_patience, DetectionReport};
use autowu::train::{run_experiment, ExperimentLog, TrainError};
use serde::Serialize;

use crate::config::{FileConfig, SchedulerKind};
use crate::error::CliError;
use crate::output::{allocate_dir, config_hash, fmt_f64, write_run, write_text};
use crate::plot;

/// Runs `jobs` on up to `workers` threads; results keep job order.
fn parallel_map<T: Sync, R: Send>(jobs: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new(jobs.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = f(job);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Outcome of one training run whose logs were written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub seed: u64,
    pub log: ExperimentLog,
    pub diverged: bool,
}

/// Trains, then writes the log set into a fresh directory under `parent`.
/// A diverged run still writes its partial log.
fn run_and_write(
    parent: &Path,
    name: &str,
    command: &str,
    source: &FileConfig,
    seed: u64,
) -> Result<RunOutcome, CliError> {
    let cfg = source.resolve(seed)?;
    let (log, diverged) = match run_experiment(&cfg) {
        Ok(log) => (log, false),
        Err(TrainError::Diverged { log, .. }) => (*log, true),
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    let dir = allocate_dir(parent, name)?;
    write_run(&dir, command, source, &log)?;
    Ok(RunOutcome {
        dir,
        seed,
        log,
        diverged,
    })
}

/// One log directory per seed, named by the seed-pinned config's hash.
/// Seeds run concurrently. Fails with a runtime error if any run diverged;
/// the partial logs are kept.
pub fn cmd_run(config: &FileConfig, out: &Path, seeds: Option<&[u64]>) -> Result<Vec<RunOutcome>, CliError> {
    let seeds = config.run_seeds(seeds);
    // validate every seed before starting any training
    for &s in &seeds {
        config.resolve(s)?;
    }
    let outcomes = parallel_map(&seeds, default_workers(), |&seed| {
        let source = config.for_seed(seed);
        run_and_write(out, &config_hash(&source), "run", &source, seed)
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let diverged: Vec<String> = outcomes
        .iter()
        .filter(|o| o.diverged)
        .map(|o| format!("seed {} ({})", o.seed, o.dir.display()))
        .collect();
    if !diverged.is_empty() {
        return Err(CliError::Runtime(format!(
            "training diverged: {}",
            diverged.join(", ")
        )));
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub status: &'static str,
    pub final_train_loss: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub diverged_at: Option<usize>,
    pub dir: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
}

fn cell_name(peak: f64, warmup: usize, seed: u64) -> String {
    format!("peak{}_wu{warmup}_seed{seed}", fmt_f64(peak))
}

/// Baseline runs over the peak LR × warmup grid. Diverged cells are marked in
/// `summary.csv`; other failures are recorded as `error` rows.
pub fn cmd_sweep(config: &FileConfig, out: &Path, workers: Option<usize>) -> Result<SweepResult, CliError> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("sweep", "missing [sweep] section"))?;
    if config.scheduler.kind != SchedulerKind::Baseline {
        return Err(CliError::config("scheduler.kind", "sweep requires kind = \"baseline\""));
    }
    if config.scheduler.peak_lr.is_some() || config.scheduler.warmup_epochs.is_some() {
        return Err(CliError::config(
            "scheduler",
            "peak_lr and warmup_epochs come from [sweep]",
        ));
    }
    // cells are validated one by one below; the template only needs a
    // warmup that fits
    let mut probe = config.clone();
    probe.scheduler.warmup_epochs = Some(sweep.warmups.first().copied().unwrap_or(0));
    let template = probe.resolve(config.seed)?;
    let autowu::train::SchedulerSpec::Baseline(base) = &template.scheduler else {
        unreachable!("kind checked above")
    };
    let grid = sweep_grid(&sweep.peaks, &sweep.warmups, base)
        .map_err(|e| CliError::config("sweep", e.to_string()))?;
    let seeds = config.run_seeds(None);
    let mut jobs = Vec::new();
    for cell in &grid {
        let peak = cell.peak_lr.expect("grid sets the peak");
        for &seed in &seeds {
            let mut source = config.for_seed(seed);
            source.sweep = None;
            source.scheduler.peak_lr = Some(peak);
            source.scheduler.warmup_epochs = Some(cell.warmup_epochs);
            source.resolve(seed)?;
            jobs.push((peak, cell.warmup_epochs, seed, source));
        }
    }
    let root = allocate_dir(out, &config_hash(config))?;
    let cells = root.join("cells");
    let results = parallel_map(&jobs, workers.unwrap_or(sweep.workers), |(peak, wu, seed, source)| {
        run_and_write(&cells, &cell_name(*peak, *wu, *seed), "sweep", source, *seed)
    });
    let mut rows = Vec::new();
    for ((peak, wu, seed, _), r) in jobs.iter().zip(results) {
        let row = match r {
            Ok(o) => {
                let finite = |v: f64| v.is_finite().then_some(v);
                SweepRow {
                    peak_lr: *peak,
                    warmup_epochs: *wu,
                    seed: *seed,
                    status: if o.diverged { "diverged" } else { "completed" },
                    final_train_loss: finite(o.log.final_train_loss).filter(|_| !o.diverged),
                    final_train_acc: finite(o.log.final_train_acc).filter(|_| !o.diverged),
                    diverged_at: o.log.diverged_at,
                    dir: o.dir.strip_prefix(&root).unwrap_or(&o.dir).display().to_string(),
                }
            }
            Err(e @ CliError::Io { .. }) => return Err(e),
            Err(_) => SweepRow {
                peak_lr: *peak,
                warmup_epochs: *wu,
                seed: *seed,
                status: "error",
                final_train_loss: None,
                final_train_acc: None,
                diverged_at: None,
                dir: String::new(),
            },
        };
        rows.push(row);
    }
    write_summary(&root.join("summary.csv"), &rows)?;
    Ok(SweepResult { dir: root, rows })
}

fn write_summary(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "peak_lr",
        "warmup_epochs",
        "seed",
        "status",
        "final_train_loss",
        "final_train_acc",
        "diverged_at",
        "dir",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            fmt_f64(r.peak_lr),
            r.warmup_epochs.to_string(),
            r.seed.to_string(),
            r.status.to_string(),
            opt(r.final_train_loss),
            opt(r.final_train_acc),
            r.diverged_at.map(|s| s.to_string()).unwrap_or_default(),
            r.dir.clone(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::io("csv", std::io::Error::other(e.to_string())))?;
    write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Serialize)]
struct ReportSummary {
    shape: &'static str,
    patience: usize,
    n_records: usize,
    detection_rate: f64,
    false_positive_rate: f64,
    mean_t_star_error: f64,
    mean_latency_epochs: f64,
}

#[derive(Serialize)]
struct DetectSummary<'a> {
    autowu_version: &'static str,
    epoch_len: usize,
    seeds: Vec<u64>,
    report: Vec<ReportSummary>,
    source: &'a FileConfig,
}

/// Detector evaluation on synthetic trajectories: `records.csv` with one row
/// per (trajectory, seed, patience) and `summary.toml` with the rates.
pub fn cmd_detect_eval(config: &FileConfig, out: &Path) -> Result<PathBuf, CliError> {
    let de = config
        .detect_eval
        .as_ref()
        .ok_or_else(|| CliError::config("detect_eval", "missing [detect_eval] section"))?;
    if de.trajectories.is_empty() {
        return Err(CliError::config("detect_eval.trajectories", "at least one trajectory required"));
    }
    let detector = config.scheduler.detector()?;
    let patiences = if de.patiences.is_empty() {
        vec![detector.patience]
    } else {
        de.patiences.clone()
    };
    let seeds = de.seed_list();
    if seeds.is_empty() {
        return Err(CliError::config("detect_eval.n_seeds", "no seeds"));
    }
    let mut reports: Vec<DetectionReport> = Vec::new();
    for spec in &de.trajectories {
        let r = evaluate_patience(std::slice::from_ref(spec), &detector, de.epoch_len, &seeds, &patiences)
            .map_err(|e| CliError::config("detect_eval", e.to_string()))?;
        reports.extend(r);
    }
    let dir = allocate_dir(out, &config_hash(config))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "shape",
        "seed",
        "patience",
        "switch_epoch",
        "switch_step",
        "t_star",
        "t_true",
        "detected",
        "false_positive",
    ])?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for rep in &reports {
        for r in &rep.records {
            w.write_record([
                r.shape.name().to_string(),
                r.seed.to_string(),
                r.patience.to_string(),
                opt(r.switch_epoch),
                opt(r.switch_step),
                opt(r.t_star),
                opt(r.t_true),
                r.detected().to_string(),
                r.false_positive().to_string(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::io("csv", std::io::Error::other(e.to_string())))?;
    write_text(&dir.join("records.csv"), &String::from_utf8(bytes).expect("csv is utf-8"))?;
    let summary = DetectSummary {
        autowu_version: autowu::VERSION,
        epoch_len: de.epoch_len,
        seeds,
        report: reports
            .iter()
            .map(|r| ReportSummary {
                shape: r.records.first().map_or("", |x| x.shape.name()),
                patience: r.records.first().map_or(0, |x| x.patience),
                n_records: r.records.len(),
                detection_rate: r.detection_rate,
                false_positive_rate: r.false_positive_rate,
                mean_t_star_error: r.mean_t_star_error,
                mean_latency_epochs: r.mean_latency_epochs,
            })
            .collect(),
        source: config,
    };
    let text = toml::to_string(&summary)
        .map_err(|e| CliError::io("serializing summary", std::io::Error::other(e.to_string())))?;
    write_text(&dir.join("summary.toml"), &text)?;
    Ok(dir)
}

/// Renders `lr.svg` and `loss.svg` for a run directory, `heatmap.svg` for a
/// sweep directory. Existing figures are replaced.
pub fn cmd_plot(input: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let steps = input.join("steps.csv");
    let summary = input.join("summary.csv");
    let mut figures: Vec<(&str, String)> = Vec::new();
    if steps.is_file() {
        let s = plot::read_steps(&steps)?;
        if s.steps.is_empty() {
            return Err(CliError::MissingLog(input.to_path_buf()));
        }
        figures.push(("lr.svg", plot::lr_svg(&s)));
        figures.push(("loss.svg", plot::loss_svg(&s)));
    }
    if summary.is_file() {
        let cells = plot::read_sweep_summary(&summary)?;
        if cells.is_empty() {
            return Err(CliError::MissingLog(input.to_path_buf()));
        }
        figures.push(("heatmap.svg", plot::heatmap_svg(&cells)));
    }
    if figures.is_empty() {
        return Err(CliError::MissingLog(input.to_path_buf()));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let mut written = Vec::new();
    for (name, svg) in figures {
        let path = out.join(name);
        fs::write(&path, svg).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    Ok(written)
}

/// One line per written directory, for the terminal.
pub fn describe_runs(outcomes: &[RunOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let _ = writeln!(
            s,
            "seed {}: {} steps, final loss {}, {}",
            o.seed,
            o.log.steps.len(),
            fmt_f64(o.log.final_train_loss),
            o.dir.display()
        );
    }
    s
}
