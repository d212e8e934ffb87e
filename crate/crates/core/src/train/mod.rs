//! Desk-scale supervised training that feeds a loss stream to a schedule.

mod data;
mod model;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{make_dataset, make_split, Dataset, DatasetKind, DatasetSpec};
pub use model::{evaluate, forward_backward, Activation, Model, ModelKind, ModelSpec};

use crate::numerics::Rng;
use crate::optim::{self, OptimError, OptimizerConfig, OptimizerKind};
use crate::schedule::{
    AutoWu, AutoWuConfig, BaselineConfig, Phase, Schedule, ScheduleError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid experiment config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("training diverged at step {step}")]
    Diverged { step: usize, log: Box<ExperimentLog> },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerSpec {
    Autowu(AutoWuConfig),
    Baseline(BaselineConfig),
    Fixed { lr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
    pub scheduler: SchedulerSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Record wall-clock timings. Off keeps logs byte-reproducible.
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn steps_per_epoch(&self) -> usize {
        self.dataset.n_samples.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    /// Copies the step counts implied by dataset size, batch size and
    /// epochs into the scheduler config.
    pub fn with_resolved_steps(mut self) -> Self {
        let (total, per_epoch) = (self.total_steps(), self.steps_per_epoch());
        match &mut self.scheduler {
            SchedulerSpec::Autowu(c) => c.total_steps = total,
            SchedulerSpec::Baseline(c) => {
                c.total_steps = total;
                c.steps_per_epoch = per_epoch;
            }
            SchedulerSpec::Fixed { .. } => {}
        }
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field, reason: String| Err(TrainError::InvalidConfig { field, reason });
        self.dataset.validate()?;
        self.model.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.dataset.n_samples < self.batch_size {
            return bad(
                "batch_size",
                format!(
                    "{} exceeds n_samples ({})",
                    self.batch_size, self.dataset.n_samples
                ),
            );
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        let total = self.total_steps();
        match &self.scheduler {
            SchedulerSpec::Autowu(c) => {
                if c.total_steps != total {
                    return bad(
                        "total_steps",
                        format!("scheduler has {}, run has {total}", c.total_steps),
                    );
                }
                c.validate()?;
            }
            SchedulerSpec::Baseline(c) => {
                if c.total_steps != total || c.steps_per_epoch != self.steps_per_epoch() {
                    return bad(
                        "total_steps",
                        format!(
                            "scheduler has {} steps of {} per epoch, run has {total} of {}",
                            c.total_steps,
                            c.steps_per_epoch,
                            self.steps_per_epoch()
                        ),
                    );
                }
                c.validate()?;
            }
            SchedulerSpec::Fixed { lr } => {
                if !(*lr >= 0.0 && lr.is_finite()) {
                    return bad("lr", format!("must be non-negative, got {lr}"));
                }
            }
        }
        Ok(())
    }

    fn build_schedule(&self) -> Result<Schedule, TrainError> {
        Ok(match &self.scheduler {
            SchedulerSpec::Autowu(c) => Schedule::AutoWu(AutoWu::new(*c)?),
            SchedulerSpec::Baseline(c) => Schedule::Baseline { cfg: *c, step: 0 },
            SchedulerSpec::Fixed { lr } => Schedule::Fixed { lr: *lr },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochTest {
    pub detected: bool,
    pub patience_flag: usize,
    pub p_min_values: Vec<f64>,
    pub fit_diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eval_loss: f64,
    pub eval_acc: f64,
    /// Present for epochs that ran a detector test.
    pub test: Option<EpochTest>,
    /// Set from the switch epoch onwards.
    pub t_star: Option<usize>,
    pub gp_test_ms: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchRecord {
    /// First step of the decay phase.
    pub step: usize,
    pub epoch: usize,
    pub t_star: usize,
    pub decay_start_lr: f64,
    /// Reached the warmup cap without a detection.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    pub config: ExperimentConfig,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub switch: Option<SwitchRecord>,
    /// Full-batch training loss and accuracy after the last step.
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub diverged_at: Option<usize>,
}

impl ExperimentLog {
    /// Number of warmup→decay transitions in the step records.
    pub fn transitions(&self) -> usize {
        self.steps
            .windows(2)
            .filter(|w| w[0].phase == Phase::Warmup && w[1].phase == Phase::Decay)
            .count()
    }
}

fn update(
    model: &mut Model,
    grads: &[Vec<f64>],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), OptimError> {
    // Biases get neither weight decay nor the scale-invariant projection.
    let bias_cfg = OptimizerConfig {
        kind: match cfg.kind {
            OptimizerKind::AdamP => OptimizerKind::Adam,
            k => k,
        },
        weight_decay: 0.0,
        ..*cfg
    };
    for (i, (group, grad)) in model.groups_mut().iter_mut().zip(grads).enumerate() {
        let c = if Model::is_weight_group(i) { cfg } else { &bias_cfg };
        optim::step(group, grad, lr, c)?;
    }
    Ok(())
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs `T = epochs·⌈n/B⌉` steps. Divergence returns
/// [`TrainError::Diverged`] carrying the log up to the failing step.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentLog, TrainError> {
    cfg.validate()?;
    let (train, eval) = make_split(&cfg.dataset)?;
    let mut model = Model::new(&cfg.model, train.n_features(), train.n_classes)?;
    let mut schedule = cfg.build_schedule()?;
    let mut shuffle_rng = Rng::with_stream(cfg.seed, 1);
    let mut detector_rng = Rng::with_stream(cfg.seed, 2);

    let n = train.len();
    let per_epoch = cfg.steps_per_epoch();
    let mut log = ExperimentLog {
        config: cfg.clone(),
        steps: Vec::with_capacity(cfg.total_steps()),
        epochs: Vec::with_capacity(cfg.epochs),
        switch: None,
        final_train_loss: f64::NAN,
        final_train_acc: f64::NAN,
        diverged_at: None,
    };
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut test = None;
        let mut gp_test_ms = None;
        for b in 0..per_epoch {
            let step = epoch * per_epoch + b;
            let batch = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(n)];
            let lr = schedule.lr();
            let phase = schedule.phase();
            let (loss, grads) = match forward_backward(&model, &train, batch) {
                Ok(r) => r,
                Err(TrainError::NonFiniteLoss(loss)) => {
                    log.steps.push(StepRecord {
                        step,
                        epoch,
                        lr,
                        train_loss: loss,
                        phase,
                    });
                    log.diverged_at = Some(step);
                    return Err(TrainError::Diverged {
                        step,
                        log: Box::new(log),
                    });
                }
                Err(e) => return Err(e),
            };
            update(&mut model, &grads, lr, &cfg.optimizer)?;
            log.steps.push(StepRecord {
                step,
                epoch,
                lr,
                train_loss: loss,
                phase,
            });

            let epoch_end = b + 1 == per_epoch;
            let started = Instant::now();
            let report = schedule.observe(loss, epoch_end, &mut detector_rng)?;
            if let Some(report) = report {
                if let Some((outcome, decision)) = &report.test {
                    test = Some(EpochTest {
                        detected: outcome.detected,
                        patience_flag: decision.patience_flag,
                        p_min_values: outcome.p_min_values.clone(),
                        fit_diverged: outcome.fit_diverged,
                    });
                    gp_test_ms = cfg.record_timing.then(|| ms_since(started));
                }
                if report.switched {
                    if let Schedule::AutoWu(s) = &schedule {
                        let st = s.state();
                        log.switch = Some(SwitchRecord {
                            step: st.switch_step.expect("switched"),
                            epoch,
                            t_star: st.t_star.expect("switched"),
                            decay_start_lr: st.decay_start_lr.expect("switched"),
                            forced: st.forced_switch,
                        });
                    }
                }
            }
        }
        let (eval_loss, eval_acc) = evaluate(&model, &eval);
        log.epochs.push(EpochRecord {
            epoch,
            eval_loss,
            eval_acc,
            test,
            t_star: log.switch.map(|s| s.t_star),
            gp_test_ms,
            wall_ms: cfg.record_timing.then(|| ms_since(epoch_start)),
        });
    }
    let (loss, acc) = evaluate(&model, &train);
    log.final_train_loss = loss;
    log.final_train_acc = acc;
    Ok(log)
}
