//! Learning-rate schedules.
//!
//! [`AutoWu`] is the two-phase state machine: the LR grows geometrically
//! from `eta_min` towards `eta_max` over at most `⌊rho_w·T⌋` steps while a
//! [`MinimumDetector`] watches the loss; once the detector fires (or the cap
//! is reached) the LR restarts from the value it had at the estimated
//! minimum `t*` and decays to zero at `T`.
//!
//! [`baseline_lr`] is the conventional linear-warmup + cosine schedule with
//! square-root batch scaling, used for comparison runs and grid sweeps.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    compute_t_star, DetectorConfig, DetectorDecision, DetectorError, MinimumDetector, TestOutcome,
};
use crate::numerics::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("step {step} is beyond the total of {total} steps")]
    StepBeyondTotal { step: usize, total: usize },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

fn invalid<T>(field: &'static str, reason: impl Into<String>) -> Result<T, ScheduleError> {
    Err(ScheduleError::InvalidConfig {
        field,
        reason: reason.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    Cosine,
    ConstantThenCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupGrowth {
    Exponential,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoWuConfig {
    pub eta_min: f64,
    pub eta_max: f64,
    pub rho_w: f64,
    pub total_steps: usize,
    pub decay_shape: DecayShape,
    /// Fraction of `T` at the end over which constant-then-cosine anneals.
    pub tail_fraction: f64,
    pub detector: DetectorConfig,
    pub warmup_growth: WarmupGrowth,
}

impl AutoWuConfig {
    /// `eta_min = 1e-5`, `eta_max = 1`, `rho_w = 0.5`, cosine decay.
    pub fn new(total_steps: usize) -> Self {
        Self {
            eta_min: 1e-5,
            eta_max: 1.0,
            rho_w: 0.5,
            total_steps,
            decay_shape: DecayShape::Cosine,
            tail_fraction: 0.2,
            detector: DetectorConfig::default(),
            warmup_growth: WarmupGrowth::Exponential,
        }
    }

    /// The warmup cap `⌊rho_w·T⌋`.
    pub fn warmup_steps(&self) -> usize {
        (self.rho_w * self.total_steps as f64).floor() as usize
    }

    /// Per-step growth factor `γ = (eta_max/eta_min)^(1/⌊rho_w·T⌋)`.
    pub fn gamma(&self) -> f64 {
        (self.eta_max / self.eta_min).powf(1.0 / self.warmup_steps() as f64)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.eta_min > 0.0 && self.eta_min.is_finite()) {
            return invalid("eta_min", format!("must be positive, got {}", self.eta_min));
        }
        if !(self.eta_max > self.eta_min && self.eta_max.is_finite()) {
            return invalid("eta_max", format!("must exceed eta_min, got {}", self.eta_max));
        }
        if !(self.rho_w > 0.0 && self.rho_w < 1.0) {
            return invalid("rho_w", format!("must lie in (0, 1), got {}", self.rho_w));
        }
        if self.warmup_steps() < 1 {
            return invalid(
                "rho_w",
                format!("rho_w * total_steps must be at least 1 (T = {})", self.total_steps),
            );
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return invalid(
                "tail_fraction",
                format!("must lie in (0, 1), got {}", self.tail_fraction),
            );
        }
        self.detector.validate()?;
        Ok(())
    }
}

/// `eta_min·γ^t`, evaluated in closed form.
pub fn warmup_lr(t: usize, cfg: &AutoWuConfig) -> f64 {
    let frac = t as f64 / cfg.warmup_steps() as f64;
    cfg.eta_min * ((cfg.eta_max / cfg.eta_min).ln() * frac).exp()
}

/// `eta_min + (eta_max − eta_min)·t/⌊rho_w·T⌋`.
pub fn linear_warmup_lr(t: usize, cfg: &AutoWuConfig) -> f64 {
    let frac = t as f64 / cfg.warmup_steps() as f64;
    cfg.eta_min + (cfg.eta_max - cfg.eta_min) * frac
}

/// Warmup LR under the configured growth law.
pub fn growth_lr(t: usize, cfg: &AutoWuConfig) -> f64 {
    match cfg.warmup_growth {
        WarmupGrowth::Exponential => warmup_lr(t, cfg),
        WarmupGrowth::Linear => linear_warmup_lr(t, cfg),
    }
}

fn half_cosine(start_lr: f64, t: usize, from: usize, to: usize) -> f64 {
    if to <= from {
        return start_lr;
    }
    let progress = (t.clamp(from, to) - from) as f64 / (to - from) as f64;
    start_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Decay-phase LR at step `t` for a switch at `switch_step` from
/// `start_lr`. Reaches 0 at `t = T`.
pub fn decay_lr(t: usize, switch_step: usize, start_lr: f64, cfg: &AutoWuConfig) -> f64 {
    let total = cfg.total_steps;
    match cfg.decay_shape {
        DecayShape::Cosine => half_cosine(start_lr, t, switch_step, total),
        DecayShape::ConstantThenCosine => {
            let tail = (cfg.tail_fraction * total as f64).ceil() as usize;
            let anneal_from = total.saturating_sub(tail).max(switch_step);
            if t < anneal_from {
                start_lr
            } else {
                half_cosine(start_lr, t, anneal_from, total)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Decay,
    /// Fixed-LR runs.
    Constant,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Decay => "decay",
            Phase::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchedulerState {
    pub phase: Phase,
    /// Index of the step whose LR is `lr`.
    pub step: usize,
    pub lr: f64,
    pub switch_step: Option<usize>,
    pub decay_start_lr: Option<f64>,
    pub t_star: Option<usize>,
    /// The switch came from the warmup cap rather than a detection.
    pub forced_switch: bool,
    pub detector: MinimumDetector,
}

/// What happened during one [`AutoWu::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// LR for the next step.
    pub lr: f64,
    pub test: Option<(TestOutcome, DetectorDecision)>,
    pub switched: bool,
}

#[derive(Debug, Clone)]
pub struct AutoWu {
    cfg: AutoWuConfig,
    state: SchedulerState,
}

impl AutoWu {
    pub fn new(cfg: AutoWuConfig) -> Result<Self, ScheduleError> {
        cfg.validate()?;
        let state = SchedulerState {
            phase: Phase::Warmup,
            step: 0,
            lr: growth_lr(0, &cfg),
            switch_step: None,
            decay_start_lr: None,
            t_star: None,
            forced_switch: false,
            detector: MinimumDetector::new(cfg.detector)?,
        };
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &AutoWuConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SchedulerState {
        &self.state
    }

    /// LR for the current step.
    pub fn lr(&self) -> f64 {
        self.state.lr
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    fn switch(&mut self, t_star: usize, forced: bool) {
        let next = self.state.step + 1;
        let start = growth_lr(t_star, &self.cfg);
        self.state.phase = Phase::Decay;
        self.state.switch_step = Some(next);
        self.state.decay_start_lr = Some(start);
        self.state.t_star = Some(t_star);
        self.state.forced_switch = forced;
    }

    /// Consumes the loss of the current step and advances to the next one.
    pub fn step(
        &mut self,
        loss: f64,
        epoch_end: bool,
        rng: &mut Rng,
    ) -> Result<StepReport, ScheduleError> {
        let t = self.state.step;
        let total = self.cfg.total_steps;
        if t >= total {
            return Err(ScheduleError::StepBeyondTotal { step: t, total });
        }
        let mut test = None;
        let mut switched = false;
        if self.state.phase == Phase::Warmup {
            self.state.detector.record(loss)?;
            if epoch_end {
                if let Some((outcome, decision)) = self.state.detector.end_epoch(rng)? {
                    if let (true, Some(t_star)) = (decision.switch_now, decision.t_star) {
                        self.switch(t_star, false);
                        switched = true;
                    }
                    test = Some((outcome, decision));
                }
            }
            let cap = self.cfg.warmup_steps();
            if !switched && t >= cap {
                let t_star = self
                    .state
                    .detector
                    .last_outcome()
                    .map(|o| compute_t_star(o, o.step))
                    .unwrap_or(cap);
                self.switch(t_star, true);
                switched = true;
            }
        }
        let next = t + 1;
        let lr = match (self.state.switch_step, self.state.decay_start_lr) {
            (Some(s), Some(start)) => decay_lr(next, s, start, &self.cfg),
            _ => growth_lr(next, &self.cfg),
        };
        self.state.step = next;
        self.state.lr = lr;
        Ok(StepReport { lr, test, switched })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub eta_base: f64,
    pub batch_size: usize,
    pub reference_batch: usize,
    pub warmup_epochs: usize,
    pub total_steps: usize,
    pub steps_per_epoch: usize,
    /// Explicit peak LR; overrides the square-root scaling when set.
    pub peak_lr: Option<f64>,
}

impl BaselineConfig {
    pub fn new(batch_size: usize, total_steps: usize, steps_per_epoch: usize) -> Self {
        Self {
            eta_base: 0.001,
            batch_size,
            reference_batch: 256,
            warmup_epochs: 5,
            total_steps,
            steps_per_epoch,
            peak_lr: None,
        }
    }

    /// `eta_base·sqrt(B / reference_batch)` unless overridden.
    pub fn peak(&self) -> f64 {
        self.peak_lr.unwrap_or_else(|| {
            self.eta_base * (self.batch_size as f64 / self.reference_batch as f64).sqrt()
        })
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.peak() > 0.0 && self.peak().is_finite()) {
            return invalid("peak_lr", format!("peak LR must be positive, got {}", self.peak()));
        }
        if self.reference_batch == 0 {
            return invalid("reference_batch", "must be positive");
        }
        if self.warmup_steps() >= self.total_steps {
            return invalid(
                "warmup_epochs",
                format!(
                    "{} warmup steps leave no room for decay within {} steps",
                    self.warmup_steps(),
                    self.total_steps
                ),
            );
        }
        Ok(())
    }
}

/// Linear warmup from 0 to the peak, then cosine to 0 at `T`.
pub fn baseline_lr(t: usize, cfg: &BaselineConfig) -> f64 {
    let peak = cfg.peak();
    let w = cfg.warmup_steps();
    if t < w {
        peak * t as f64 / w as f64
    } else {
        half_cosine(peak, t, w, cfg.total_steps)
    }
}

/// Cartesian product of peak LRs and warmup lengths over `template`.
pub fn sweep_grid(
    peaks: &[f64],
    warmups: &[usize],
    template: &BaselineConfig,
) -> Result<Vec<BaselineConfig>, ScheduleError> {
    if peaks.is_empty() {
        return invalid("peaks", "sweep needs at least one peak LR");
    }
    if warmups.is_empty() {
        return invalid("warmups", "sweep needs at least one warmup length");
    }
    Ok(peaks
        .iter()
        .flat_map(|&peak| {
            warmups.iter().map(move |&warmup_epochs| BaselineConfig {
                peak_lr: Some(peak),
                warmup_epochs,
                ..*template
            })
        })
        .collect())
}

/// Any schedule a training run can follow.
#[derive(Debug, Clone)]
pub enum Schedule {
    AutoWu(AutoWu),
    Baseline { cfg: BaselineConfig, step: usize },
    Fixed { lr: f64 },
}

impl Schedule {
    pub fn lr(&self) -> f64 {
        match self {
            Schedule::AutoWu(s) => s.lr(),
            Schedule::Baseline { cfg, step } => baseline_lr(*step, cfg),
            Schedule::Fixed { lr } => *lr,
        }
    }

    pub fn phase(&self) -> Phase {
        match self {
            Schedule::AutoWu(s) => s.phase(),
            Schedule::Baseline { cfg, step } if *step < cfg.warmup_steps() => Phase::Warmup,
            Schedule::Baseline { .. } => Phase::Decay,
            Schedule::Fixed { .. } => Phase::Constant,
        }
    }

    /// Feeds the loss of the current step; returns the report for AutoWU.
    pub fn observe(
        &mut self,
        loss: f64,
        epoch_end: bool,
        rng: &mut Rng,
    ) -> Result<Option<StepReport>, ScheduleError> {
        match self {
            Schedule::AutoWu(s) => s.step(loss, epoch_end, rng).map(Some),
            Schedule::Baseline { step, .. } => {
                *step += 1;
                Ok(None)
            }
            Schedule::Fixed { .. } => Ok(None),
        }
    }
}
