//! Synthetic loss trajectories with a known minimum, and a harness that
//! runs the detector over seeded ensembles of them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    compute_t_star, epoch_test, update_patience, DetectorConfig, DetectorError, LossTrajectory,
    TestOutcome,
};
use crate::numerics::Rng;

/// Asymptote and amplitude of the decaying shapes.
pub const DECAY_FLOOR: f64 = 1.0;
pub const DECAY_AMPLITUDE: f64 = 1.0;
/// `τ` as a fraction of the trajectory length.
pub const DECAY_TAU_FRACTION: f64 = 0.25;
/// Height of the V above its vertex at distance one full length.
pub const V_CURVATURE: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryShape {
    MonotoneDecay,
    VShape,
    Plateau,
    SpikyDecay,
}

impl TrajectoryShape {
    pub fn name(self) -> &'static str {
        match self {
            TrajectoryShape::MonotoneDecay => "monotone_decay",
            TrajectoryShape::VShape => "v_shape",
            TrajectoryShape::Plateau => "plateau",
            TrajectoryShape::SpikyDecay => "spiky_decay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub shape: TrajectoryShape,
    pub length: usize,
    /// Vertex of the V, or where the plateau begins.
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
    /// Standard deviation of the multiplicative Gaussian noise.
    #[serde(default)]
    pub noise_rel: f64,
    #[serde(default)]
    pub spike_prob: f64,
    #[serde(default)]
    pub spike_magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_fraction() -> f64 {
    0.5
}

impl TrajectorySpec {
    pub fn new(shape: TrajectoryShape, length: usize) -> Self {
        Self {
            shape,
            length,
            min_fraction: default_min_fraction(),
            noise_rel: 0.0,
            spike_prob: 0.0,
            spike_magnitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.length < 2 {
            return bad(format!("length must be at least 2, got {}", self.length));
        }
        if !(self.min_fraction > 0.0 && self.min_fraction < 1.0) {
            return bad(format!("min_fraction must lie in (0, 1), got {}", self.min_fraction));
        }
        if !(self.noise_rel >= 0.0 && self.noise_rel.is_finite()) {
            return bad(format!("noise_rel must be non-negative, got {}", self.noise_rel));
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return bad(format!("spike_prob must lie in [0, 1], got {}", self.spike_prob));
        }
        if !(self.spike_magnitude >= 0.0 && self.spike_magnitude.is_finite()) {
            return bad(format!(
                "spike_magnitude must be non-negative, got {}",
                self.spike_magnitude
            ));
        }
        Ok(())
    }

    /// The step where the noiseless curve stops decreasing, if it does.
    pub fn true_minimum(&self) -> Option<usize> {
        match self.shape {
            TrajectoryShape::VShape | TrajectoryShape::Plateau => {
                Some((self.min_fraction * self.length as f64).round() as usize)
            }
            TrajectoryShape::MonotoneDecay | TrajectoryShape::SpikyDecay => None,
        }
    }

    /// Noiseless curve at step `t`.
    pub fn base(&self, t: usize) -> f64 {
        let len = self.length as f64;
        let decay = |s: f64| DECAY_FLOOR + DECAY_AMPLITUDE * (-s / (DECAY_TAU_FRACTION * len)).exp();
        match self.shape {
            TrajectoryShape::MonotoneDecay | TrajectoryShape::SpikyDecay => decay(t as f64),
            TrajectoryShape::VShape => {
                let m = self.true_minimum().expect("v_shape has a minimum") as f64;
                DECAY_FLOOR + V_CURVATURE * ((t as f64 - m) / len).powi(2)
            }
            TrajectoryShape::Plateau => {
                let m = self.true_minimum().expect("plateau has a start");
                decay(t.min(m) as f64)
            }
        }
    }
}

pub fn gen_trajectory(spec: &TrajectorySpec) -> Result<LossTrajectory, SynthError> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let spiky = spec.shape == TrajectoryShape::SpikyDecay;
    let losses = (0..spec.length)
        .map(|t| {
            let mut y = spec.base(t) * (1.0 + spec.noise_rel * rng.normal());
            if spiky && rng.bernoulli(spec.spike_prob) {
                y *= 1.0 + spec.spike_magnitude;
            }
            y
        })
        .collect();
    Ok(LossTrajectory::from_losses(losses)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub shape: TrajectoryShape,
    pub seed: u64,
    pub patience: usize,
    pub switch_epoch: Option<usize>,
    /// Last recorded step when the switch was decided.
    pub switch_step: Option<usize>,
    pub t_star: Option<usize>,
    pub t_true: Option<usize>,
}

impl SeedRecord {
    /// Switched at or after the true minimum.
    pub fn detected(&self) -> bool {
        matches!((self.switch_step, self.t_true), (Some(s), Some(t)) if s >= t)
    }

    /// Switched where the curve was still decreasing.
    pub fn false_positive(&self) -> bool {
        match (self.switch_step, self.t_true) {
            (Some(_), None) => true,
            (Some(s), Some(t)) => s < t,
            (None, _) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub records: Vec<SeedRecord>,
    pub epoch_len: usize,
    /// Among records with a true minimum.
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    /// Mean `|t*/t_true − 1|` over detected records.
    pub mean_t_star_error: f64,
    /// Mean epochs from the one holding `t_true` to the switch, over detected
    /// records.
    pub mean_latency_epochs: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl DetectionReport {
    pub fn from_records(records: Vec<SeedRecord>, epoch_len: usize) -> Self {
        let with_min = records.iter().filter(|r| r.t_true.is_some()).count();
        let detected: Vec<&SeedRecord> = records.iter().filter(|r| r.detected()).collect();
        let fp = records.iter().filter(|r| r.false_positive()).count();
        let detection_rate = if with_min == 0 {
            f64::NAN
        } else {
            detected.len() as f64 / with_min as f64
        };
        let false_positive_rate = if records.is_empty() {
            f64::NAN
        } else {
            fp as f64 / records.len() as f64
        };
        let mean_t_star_error = mean(detected.iter().map(|r| {
            let t_true = r.t_true.expect("detected") as f64;
            (r.t_star.expect("detected") as f64 / t_true - 1.0).abs()
        }));
        let mean_latency_epochs = mean(detected.iter().map(|r| {
            let from = r.t_true.expect("detected") / epoch_len;
            (r.switch_epoch.expect("detected") - from) as f64
        }));
        Self {
            records,
            epoch_len,
            detection_rate,
            false_positive_rate,
            mean_t_star_error,
            mean_latency_epochs,
        }
    }
}

/// Test outcomes of one trajectory, epoch by epoch, until `stop` returns
/// true. Epoch `e` draws its subsets from stream `e` of the spec's seed, so
/// the sequence does not depend on the patience in use.
fn run_tests(
    traj: &LossTrajectory,
    cfg: &DetectorConfig,
    epoch_len: usize,
    seed: u64,
    mut stop: impl FnMut(&TestOutcome) -> bool,
) -> Result<Vec<TestOutcome>, SynthError> {
    let mut outcomes = Vec::new();
    let mut prefix = LossTrajectory::new();
    for (step, loss) in traj.entries() {
        prefix.record(step, loss)?;
        if (step + 1) % epoch_len != 0 || prefix.len() < 2 {
            continue;
        }
        let epoch = step / epoch_len;
        let mut rng = Rng::with_stream(seed, epoch as u64);
        let outcome = epoch_test(&prefix, cfg, &mut rng)?;
        let done = stop(&outcome);
        outcomes.push(outcome);
        if done {
            break;
        }
    }
    Ok(outcomes)
}

/// Replays the patience rule over a fixed outcome sequence.
fn record_for(
    spec: &TrajectorySpec,
    outcomes: &[TestOutcome],
    cfg: &DetectorConfig,
    epoch_len: usize,
) -> SeedRecord {
    let mut flag = 0;
    let mut record = SeedRecord {
        shape: spec.shape,
        seed: spec.seed,
        patience: cfg.patience,
        switch_epoch: None,
        switch_step: None,
        t_star: None,
        t_true: spec.true_minimum(),
    };
    for outcome in outcomes {
        let decision = update_patience(flag, outcome, cfg, outcome.step);
        flag = decision.patience_flag;
        if decision.switch_now {
            record.switch_epoch = Some(outcome.step / epoch_len);
            record.switch_step = Some(outcome.step);
            record.t_star = Some(compute_t_star(outcome, outcome.step));
            break;
        }
    }
    record
}

fn check_epoch_len(epoch_len: usize) -> Result<(), SynthError> {
    if epoch_len < 2 {
        return Err(SynthError::InvalidSpec(format!(
            "epoch_len must be at least 2, got {epoch_len}"
        )));
    }
    Ok(())
}

/// Runs the detector over every `(spec, seed)` pair, stopping each run at
/// its switch.
pub fn evaluate_detector(
    specs: &[TrajectorySpec],
    cfg: &DetectorConfig,
    epoch_len: usize,
    seeds: &[u64],
) -> Result<DetectionReport, SynthError> {
    Ok(evaluate_patience(specs, cfg, epoch_len, seeds, &[cfg.patience])?
        .pop()
        .expect("one patience"))
}

/// One report per patience value. Each trajectory is tested once and the
/// outcome sequence replayed under every patience, so the reports are
/// paired.
pub fn evaluate_patience(
    specs: &[TrajectorySpec],
    cfg: &DetectorConfig,
    epoch_len: usize,
    seeds: &[u64],
    patiences: &[usize],
) -> Result<Vec<DetectionReport>, SynthError> {
    check_epoch_len(epoch_len)?;
    let cfgs: Vec<DetectorConfig> = patiences.iter().map(|&p| cfg.with_patience(p)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let max_patience = patiences.iter().copied().max().unwrap_or(1);
    let mut records: Vec<Vec<SeedRecord>> = vec![Vec::new(); cfgs.len()];
    for spec in specs {
        for &seed in seeds {
            let spec = TrajectorySpec { seed, ..*spec };
            let traj = gen_trajectory(&spec)?;
            let mut run = 0;
            let outcomes = run_tests(&traj, cfg, epoch_len, seed, |o| {
                run = if o.detected { run + 1 } else { 0 };
                run >= max_patience
            })?;
            for (c, out) in cfgs.iter().zip(records.iter_mut()) {
                out.push(record_for(&spec, &outcomes, c, epoch_len));
            }
        }
    }
    Ok(records
        .into_iter()
        .map(|r| DetectionReport::from_records(r, epoch_len))
        .collect())
}
