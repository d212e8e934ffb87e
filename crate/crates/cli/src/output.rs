//! Log files: `steps.csv`, `epochs.csv` and `meta.toml` per run.
//!
//! `steps.csv`: `step, epoch, lr, train_loss, phase`.
//! `epochs.csv`: `epoch, eval_loss, eval_acc, detected, patience_flag,
//! p_min_1 .. p_min_n, t_star, gp_test_ms`; detector cells are empty in
//! epochs without a test, `t_star` is empty until the switch.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use autowu::train::{ExperimentConfig, ExperimentLog, SchedulerSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::error::CliError;

/// Floats are written in their shortest round-trip form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// First 12 hex digits of the SHA-256 of the value's TOML form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = toml::to_string(value).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest[..6].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Creates `parent/name`, or `parent/name-1`, `name-2`, ... if taken.
/// Existing directories are never reused.
pub fn allocate_dir(parent: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(parent)
        .map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
    for i in 0.. {
        let candidate = if i == 0 {
            parent.join(name)
        } else {
            parent.join(format!("{name}-{i}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(format!("creating {}", candidate.display()), e)),
        }
    }
    unreachable!()
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    use io::Write;
    create(path)?
        .write_all(text.as_bytes())
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn write_steps_csv(path: &Path, log: &ExperimentLog) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["step", "epoch", "lr", "train_loss", "phase"])?;
    for s in &log.steps {
        w.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            fmt_f64(s.lr),
            fmt_f64(s.train_loss),
            s.phase.name().to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn n_test(cfg: &ExperimentConfig) -> usize {
    match &cfg.scheduler {
        SchedulerSpec::Autowu(a) => a.detector.n_test,
        _ => 0,
    }
}

pub fn write_epochs_csv(path: &Path, log: &ExperimentLog) -> Result<(), CliError> {
    let n = n_test(&log.config);
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![
        "epoch".to_string(),
        "eval_loss".into(),
        "eval_acc".into(),
        "detected".into(),
        "patience_flag".into(),
    ];
    header.extend((1..=n).map(|i| format!("p_min_{i}")));
    header.extend(["t_star".to_string(), "gp_test_ms".into()]);
    w.write_record(&header)?;
    let finite = |v: f64| v.is_finite().then(|| fmt_f64(v));
    for e in &log.epochs {
        let mut row = vec![
            e.epoch.to_string(),
            opt(finite(e.eval_loss)),
            opt(finite(e.eval_acc)),
            opt(e.test.as_ref().map(|t| t.detected)),
            opt(e.test.as_ref().map(|t| t.patience_flag)),
        ];
        for i in 0..n {
            row.push(opt(e.test.as_ref().map(|t| fmt_f64(t.p_min_values[i]))));
        }
        row.push(opt(e.t_star));
        row.push(opt(e.gp_test_ms.map(fmt_f64)));
        w.write_record(&row)?;
    }
    w.flush()
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

#[derive(Serialize)]
struct SwitchMeta {
    step: usize,
    epoch: usize,
    t_star: usize,
    decay_start_lr: f64,
    forced: bool,
}

#[derive(Serialize)]
struct TimingMeta {
    epoch_wall_ms: Vec<f64>,
    gp_test_ms: Vec<f64>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    autowu_version: &'static str,
    rng: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    diverged_at: Option<usize>,
    total_steps: usize,
    steps_per_epoch: usize,
    recorded_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_train_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    switch: Option<SwitchMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<TimingMeta>,
    /// The input file pinned to this run's seed; rerunning it reproduces
    /// the logs.
    source: &'a FileConfig,
    /// Fully resolved settings.
    resolved: &'a ExperimentConfig,
}

/// Writes the three log files into `dir`.
pub fn write_run(
    dir: &Path,
    command: &str,
    source: &FileConfig,
    log: &ExperimentLog,
) -> Result<(), CliError> {
    write_steps_csv(&dir.join("steps.csv"), log)?;
    write_epochs_csv(&dir.join("epochs.csv"), log)?;
    let cfg = &log.config;
    let finite = |v: f64| v.is_finite().then_some(v);
    let meta = RunMeta {
        autowu_version: autowu::VERSION,
        rng: autowu::numerics::Rng::ALGORITHM,
        command,
        seed: cfg.seed,
        config_hash: &config_hash(source),
        status: if log.diverged_at.is_some() {
            "diverged"
        } else {
            "completed"
        },
        diverged_at: log.diverged_at,
        total_steps: cfg.total_steps(),
        steps_per_epoch: cfg.steps_per_epoch(),
        recorded_steps: log.steps.len(),
        final_train_loss: finite(log.final_train_loss),
        final_train_acc: finite(log.final_train_acc),
        switch: log.switch.map(|s| SwitchMeta {
            step: s.step,
            epoch: s.epoch,
            t_star: s.t_star,
            decay_start_lr: s.decay_start_lr,
            forced: s.forced,
        }),
        timing: cfg.record_timing.then(|| TimingMeta {
            epoch_wall_ms: log.epochs.iter().filter_map(|e| e.wall_ms).collect(),
            gp_test_ms: log.epochs.iter().filter_map(|e| e.gp_test_ms).collect(),
        }),
        source,
        resolved: cfg,
    };
    let text = toml::to_string(&meta)
        .map_err(|e| CliError::io("serializing meta", io::Error::other(e.to_string())))?;
    write_text(&dir.join("meta.toml"), &text)
}
