//! Online minimum detection over a growing loss trajectory.
//!
//! Once per epoch the caller runs [`epoch_test`]: fit GP hyperparameters on
//! one random subset of the trajectory, condition `n_test` posteriors on
//! further subsets, and count how many report `p_min > c`. A majority counts
//! as a detection; `p` consecutive detections trigger the switch, and the
//! switch step `t*` is the current step times the mean posterior argmin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{self, GpError, NormalizedObservations};
use crate::numerics::{sample_without_replacement, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("expected step {expected}, got {got}")]
    NonContiguousStep { expected: usize, got: usize },
    #[error("trajectory has {0} entries; the test needs at least 2")]
    TooShort(usize),
    #[error("invalid detector config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Losses recorded at consecutive steps starting from 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrajectory {
    losses: Vec<f64>,
}

impl LossTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trajectory whose `i`-th loss is recorded at step `i`.
    pub fn from_losses(losses: Vec<f64>) -> Result<Self, DetectorError> {
        if let Some((step, &loss)) = losses.iter().enumerate().find(|(_, l)| !l.is_finite()) {
            return Err(DetectorError::NonFiniteLoss { step, loss });
        }
        Ok(Self { losses })
    }

    pub fn record(&mut self, step: usize, loss: f64) -> Result<(), DetectorError> {
        let expected = self.losses.len();
        if step != expected {
            return Err(DetectorError::NonContiguousStep { expected, got: step });
        }
        if !loss.is_finite() {
            return Err(DetectorError::NonFiniteLoss { step, loss });
        }
        self.losses.push(loss);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn last_step(&self) -> Option<usize> {
        self.losses.len().checked_sub(1)
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.losses.iter().copied().enumerate()
    }

    fn observations(&self, idx: &[usize]) -> Result<NormalizedObservations, GpError> {
        let t = self.losses.len() - 1;
        let losses: Vec<f64> = idx.iter().map(|&i| self.losses[i]).collect();
        NormalizedObservations::from_steps(idx, &losses, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub n_test: usize,
    pub confidence: f64,
    /// Consecutive positive tests required to switch. The most sensitive
    /// knob: it filters out isolated loss spikes.
    pub patience: usize,
    pub fit_subsample_max: usize,
    pub infer_subsample_max: usize,
    pub grid_size: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            n_test: 5,
            confidence: 0.95,
            patience: 3,
            fit_subsample_max: 100,
            infer_subsample_max: 500,
            grid_size: gp::DEFAULT_GRID_SIZE,
        }
    }
}

impl DetectorConfig {
    pub fn with_patience(mut self, patience: usize) -> Self {
        self.patience = patience;
        self
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |field, reason: &str| {
            Err(DetectorError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.n_test == 0 {
            return bad("n_test", "must be at least 1");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence", "must lie strictly between 0 and 1");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if self.fit_subsample_max < 2 {
            return bad("fit_subsample_max", "must be at least 2");
        }
        if self.infer_subsample_max < 2 {
            return bad("infer_subsample_max", "must be at least 2");
        }
        if self.grid_size < 2 {
            return bad("grid_size", "must be at least 2");
        }
        Ok(())
    }
}

/// Result of one end-of-epoch test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    /// Step of the last recorded loss when the test ran.
    pub step: usize,
    pub p_min_values: Vec<f64>,
    /// Posterior-mean argmin of each inference, in `[0, 1]`.
    pub argmins: Vec<f64>,
    pub detected: bool,
    /// The hyperparameter fit diverged; the epoch counts as not detected.
    pub fit_diverged: bool,
}

impl TestOutcome {
    fn majority(p_min_values: &[f64], confidence: f64) -> bool {
        let hits = p_min_values.iter().filter(|&&p| p > confidence).count();
        2 * hits > p_min_values.len()
    }
}

pub fn epoch_test(
    traj: &LossTrajectory,
    cfg: &DetectorConfig,
    rng: &mut Rng,
) -> Result<TestOutcome, DetectorError> {
    let n = traj.len();
    if n < 2 {
        return Err(DetectorError::TooShort(n));
    }
    let step = n - 1;
    let fit_idx = sample_without_replacement(rng, n, n.min(cfg.fit_subsample_max))
        .expect("k bounded by population");
    let params = match gp::fit(&traj.observations(&fit_idx)?) {
        Ok(p) => p,
        Err(GpError::FitDiverged { .. }) => {
            return Ok(TestOutcome {
                step,
                p_min_values: vec![0.0; cfg.n_test],
                argmins: vec![1.0; cfg.n_test],
                detected: false,
                fit_diverged: true,
            })
        }
        Err(e) => return Err(e.into()),
    };

    let k = n.min(cfg.infer_subsample_max);
    // Every full-population subset conditions on the same data.
    let mut full: Option<(f64, f64)> = None;
    let mut p_min_values = Vec::with_capacity(cfg.n_test);
    let mut argmins = Vec::with_capacity(cfg.n_test);
    for _ in 0..cfg.n_test {
        let idx = sample_without_replacement(rng, n, k).expect("k bounded by population");
        let (p, x) = match full {
            Some(cached) if k == n => cached,
            _ => {
                let post = gp::posterior_summary(&traj.observations(&idx)?, &params, cfg.grid_size)?;
                let r = (post.p_min(), post.argmin_mean());
                if k == n {
                    full = Some(r);
                }
                r
            }
        };
        p_min_values.push(p);
        argmins.push(x);
    }
    Ok(TestOutcome {
        step,
        detected: TestOutcome::majority(&p_min_values, cfg.confidence),
        p_min_values,
        argmins,
        fit_diverged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectorDecision {
    pub switch_now: bool,
    pub t_star: Option<usize>,
    pub patience_flag: usize,
}

/// `t* = round(current_step · mean(argmins))`, clamped to `[0, current_step]`.
pub fn compute_t_star(outcome: &TestOutcome, current_step: usize) -> usize {
    assert!(!outcome.argmins.is_empty(), "no argmins to average");
    let mean = outcome.argmins.iter().sum::<f64>() / outcome.argmins.len() as f64;
    let t = (current_step as f64 * mean).round();
    (t.max(0.0) as usize).min(current_step)
}

pub fn update_patience(
    prev_flag: usize,
    outcome: &TestOutcome,
    cfg: &DetectorConfig,
    current_step: usize,
) -> DetectorDecision {
    let patience_flag = if outcome.detected { prev_flag + 1 } else { 0 };
    let switch_now = patience_flag >= cfg.patience;
    DetectorDecision {
        switch_now,
        t_star: switch_now.then(|| compute_t_star(outcome, current_step)),
        patience_flag,
    }
}

/// Trajectory accumulator plus patience bookkeeping.
#[derive(Debug, Clone)]
pub struct MinimumDetector {
    cfg: DetectorConfig,
    trajectory: LossTrajectory,
    patience_flag: usize,
    last_outcome: Option<TestOutcome>,
}

impl MinimumDetector {
    pub fn new(cfg: DetectorConfig) -> Result<Self, DetectorError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            trajectory: LossTrajectory::new(),
            patience_flag: 0,
            last_outcome: None,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn trajectory(&self) -> &LossTrajectory {
        &self.trajectory
    }

    pub fn patience_flag(&self) -> usize {
        self.patience_flag
    }

    pub fn last_outcome(&self) -> Option<&TestOutcome> {
        self.last_outcome.as_ref()
    }

    pub fn record(&mut self, loss: f64) -> Result<(), DetectorError> {
        self.trajectory.record(self.trajectory.len(), loss)
    }

    /// Runs the end-of-epoch test. Trajectories shorter than two entries
    /// yield no test.
    pub fn end_epoch(
        &mut self,
        rng: &mut Rng,
    ) -> Result<Option<(TestOutcome, DetectorDecision)>, DetectorError> {
        if self.trajectory.len() < 2 {
            return Ok(None);
        }
        let outcome = epoch_test(&self.trajectory, &self.cfg, rng)?;
        let decision = update_patience(self.patience_flag, &outcome, &self.cfg, outcome.step);
        self.patience_flag = decision.patience_flag;
        self.last_outcome = Some(outcome.clone());
        Ok(Some((outcome, decision)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(argmins: Vec<f64>, detected: bool) -> TestOutcome {
        TestOutcome {
            step: 0,
            p_min_values: vec![if detected { 1.0 } else { 0.0 }; argmins.len()],
            argmins,
            detected,
            fit_diverged: false,
        }
    }

    #[test]
    fn record_appends_contiguously() {
        let mut t = LossTrajectory::new();
        t.record(0, 2.3).unwrap();
        assert_eq!(t.len(), 1);
        for s in 1..10 {
            t.record(s, 2.0).unwrap();
        }
        t.record(10, 1.7).unwrap();
        assert_eq!(t.len(), 11);
        assert_eq!(
            t.record(12, 1.7),
            Err(DetectorError::NonContiguousStep { expected: 11, got: 12 })
        );
        assert!(matches!(t.record(11, f64::NAN), Err(DetectorError::NonFiniteLoss { .. })));
        assert_eq!(t.len(), 11);
    }

    #[test]
    fn t_star_arithmetic() {
        assert_eq!(compute_t_star(&outcome(vec![0.5; 5], true), 200), 100);
        assert_eq!(compute_t_star(&outcome(vec![0.5, 0.6, 0.55, 0.6, 0.5], true), 200), 110);
        assert_eq!(compute_t_star(&outcome(vec![1.0; 5], true), 100), 100);
    }

    #[test]
    fn patience_rules() {
        let cfg = DetectorConfig::default();
        let d = update_patience(2, &outcome(vec![0.5; 5], true), &cfg, 200);
        assert!(d.switch_now);
        assert_eq!(d.patience_flag, 3);
        assert_eq!(d.t_star, Some(100));

        let d = update_patience(2, &outcome(vec![0.5; 5], false), &cfg, 200);
        assert!(!d.switch_now);
        assert_eq!(d.patience_flag, 0);
        assert_eq!(d.t_star, None);

        let d = update_patience(0, &outcome(vec![0.5; 5], true), &cfg.with_patience(1), 200);
        assert!(d.switch_now);
    }

    #[test]
    fn majority_rule() {
        assert!(TestOutcome::majority(&[0.96, 0.97, 0.99, 0.1, 0.2], 0.95));
        assert!(!TestOutcome::majority(&[0.96, 0.97, 0.5, 0.1, 0.2], 0.95));
        // strictly greater than c
        assert!(!TestOutcome::majority(&[0.95], 0.95));
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig {
            confidence: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(DetectorError::InvalidConfig { field: "confidence", .. })
        ));
    }

    fn quadratic(len: usize, min_frac: f64) -> LossTrajectory {
        let losses = (0..len)
            .map(|s| {
                let x = s as f64 / (len - 1) as f64;
                1.0 + 4.0 * (x - min_frac).powi(2)
            })
            .collect();
        LossTrajectory::from_losses(losses).unwrap()
    }

    #[test]
    fn detects_a_past_minimum() {
        let traj = quadratic(1000, 0.6);
        let out = epoch_test(&traj, &DetectorConfig::default(), &mut Rng::new(1)).unwrap();
        assert!(out.detected);
        assert!(out.p_min_values.iter().all(|&p| p >= 0.99), "{:?}", out.p_min_values);
        for x in &out.argmins {
            assert!((x - 0.6).abs() < 0.05, "argmin {x}");
        }
    }

    #[test]
    fn single_inference_majority() {
        let traj = quadratic(300, 0.5);
        let cfg = DetectorConfig {
            n_test: 1,
            ..Default::default()
        };
        let out = epoch_test(&traj, &cfg, &mut Rng::new(2)).unwrap();
        assert_eq!(out.p_min_values.len(), 1);
        assert_eq!(out.detected, out.p_min_values[0] > cfg.confidence);
    }

    #[test]
    fn decreasing_exponential_is_not_detected() {
        let losses = (0..400).map(|s| 0.5 + 2.0 * (-(s as f64) / 150.0).exp()).collect();
        let traj = LossTrajectory::from_losses(losses).unwrap();
        for seed in 0..5 {
            let out = epoch_test(&traj, &DetectorConfig::default(), &mut Rng::new(seed)).unwrap();
            assert!(!out.detected, "seed {seed}: {:?}", out.p_min_values);
        }
    }

    #[test]
    fn epoch_test_is_deterministic_and_read_only() {
        let traj = quadratic(700, 0.4);
        let before = traj.clone();
        let cfg = DetectorConfig::default();
        let a = epoch_test(&traj, &cfg, &mut Rng::new(8)).unwrap();
        let b = epoch_test(&traj, &cfg, &mut Rng::new(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(traj, before);
    }

    #[test]
    fn too_short_trajectory() {
        let traj = LossTrajectory::from_losses(vec![1.0]).unwrap();
        assert_eq!(
            epoch_test(&traj, &DetectorConfig::default(), &mut Rng::new(0)),
            Err(DetectorError::TooShort(1))
        );
    }
}
