//! The TOML config file. Every field has a default, so an empty file runs
//! AutoWU with its standard settings on the default task.

use std::path::Path;

use autowu::detector::{DetectorConfig, DetectorError};
use autowu::optim::{OptimizerConfig, OptimizerKind};
use autowu::schedule::{
    AutoWuConfig, BaselineConfig, DecayShape, ScheduleError, WarmupGrowth,
};
use autowu::synthgen::TrajectorySpec;
use autowu::train::{
    Activation, DatasetKind, DatasetSpec, ExperimentConfig, ModelKind, ModelSpec, SchedulerSpec,
    TrainError,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    /// Seed battery for `run`; overrides `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub batch_size: usize,
    pub epochs: usize,
    pub record_timing: bool,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub scheduler: SchedulerSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detect_eval: Option<DetectEvalSection>,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: None,
            batch_size: 512,
            epochs: 50,
            record_timing: false,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            optimizer: OptimizerSection::default(),
            scheduler: SchedulerSection::default(),
            sweep: None,
            detect_eval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub noise: f64,
    /// Defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n_eval: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::GaussianBlobs,
            n_samples: 2048,
            n_features: 2,
            n_classes: 4,
            noise: 1.0,
            seed: None,
            n_eval: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    /// Defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            hidden_sizes: vec![16],
            activation: Activation::Relu,
            seed: None,
        }
    }
}

/// Unset fields take the defaults of `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_trust_ratio: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdamP,
            beta1: None,
            beta2: None,
            eps: None,
            weight_decay: None,
            delta: None,
            momentum: None,
            max_trust_ratio: None,
        }
    }
}

impl OptimizerSection {
    pub fn resolve(&self) -> Result<OptimizerConfig, CliError> {
        let d = OptimizerConfig::for_kind(self.kind);
        let cfg = OptimizerConfig {
            kind: self.kind,
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            eps: self.eps.unwrap_or(d.eps),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            delta: self.delta.unwrap_or(d.delta),
            momentum: self.momentum.unwrap_or(d.momentum),
            max_trust_ratio: self.max_trust_ratio.unwrap_or(d.max_trust_ratio),
        };
        for (name, v, ok) in [
            ("beta1", cfg.beta1, (0.0..1.0).contains(&cfg.beta1)),
            ("beta2", cfg.beta2, (0.0..1.0).contains(&cfg.beta2)),
            ("eps", cfg.eps, cfg.eps > 0.0),
            ("weight_decay", cfg.weight_decay, cfg.weight_decay >= 0.0),
            ("delta", cfg.delta, cfg.delta > 0.0),
            ("momentum", cfg.momentum, (0.0..1.0).contains(&cfg.momentum)),
            ("max_trust_ratio", cfg.max_trust_ratio, cfg.max_trust_ratio > 0.0),
        ] {
            if !ok || !v.is_finite() {
                return Err(CliError::config(
                    format!("optimizer.{name}"),
                    format!("out of range: {v}"),
                ));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Autowu,
    Baseline,
    Fixed,
}

/// Flat scheduler table; which keys apply depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub kind: SchedulerKind,
    // autowu
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayShape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<WarmupGrowth>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_subsample_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infer_subsample_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    // baseline
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_base: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_lr: Option<f64>,
    // fixed
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            kind: SchedulerKind::Autowu,
            eta_min: None,
            eta_max: None,
            rho_w: None,
            decay: None,
            tail_fraction: None,
            warmup: None,
            n_test: None,
            confidence: None,
            patience: None,
            fit_subsample_max: None,
            infer_subsample_max: None,
            grid_size: None,
            eta_base: None,
            reference_batch: None,
            warmup_epochs: None,
            peak_lr: None,
            lr: None,
        }
    }
}

impl SchedulerSection {
    fn set_keys(&self) -> Vec<(&'static str, SchedulerKind)> {
        use SchedulerKind::*;
        let mut keys = Vec::new();
        let mut mark = |set: bool, name, kind| {
            if set {
                keys.push((name, kind));
            }
        };
        mark(self.eta_min.is_some(), "eta_min", Autowu);
        mark(self.eta_max.is_some(), "eta_max", Autowu);
        mark(self.rho_w.is_some(), "rho_w", Autowu);
        mark(self.decay.is_some(), "decay", Autowu);
        mark(self.tail_fraction.is_some(), "tail_fraction", Autowu);
        mark(self.warmup.is_some(), "warmup", Autowu);
        mark(self.eta_base.is_some(), "eta_base", Baseline);
        mark(self.reference_batch.is_some(), "reference_batch", Baseline);
        mark(self.warmup_epochs.is_some(), "warmup_epochs", Baseline);
        mark(self.peak_lr.is_some(), "peak_lr", Baseline);
        mark(self.lr.is_some(), "lr", Fixed);
        keys
    }

    /// Detector settings; also used by `detect-eval`.
    pub fn detector(&self) -> Result<DetectorConfig, CliError> {
        let d = DetectorConfig::default();
        let cfg = DetectorConfig {
            n_test: self.n_test.unwrap_or(d.n_test),
            confidence: self.confidence.unwrap_or(d.confidence),
            patience: self.patience.unwrap_or(d.patience),
            fit_subsample_max: self.fit_subsample_max.unwrap_or(d.fit_subsample_max),
            infer_subsample_max: self.infer_subsample_max.unwrap_or(d.infer_subsample_max),
            grid_size: self.grid_size.unwrap_or(d.grid_size),
        };
        cfg.validate().map_err(detector_error)?;
        Ok(cfg)
    }

    pub fn autowu(&self, total_steps: usize) -> Result<AutoWuConfig, CliError> {
        let d = AutoWuConfig::new(total_steps);
        Ok(AutoWuConfig {
            eta_min: self.eta_min.unwrap_or(d.eta_min),
            eta_max: self.eta_max.unwrap_or(d.eta_max),
            rho_w: self.rho_w.unwrap_or(d.rho_w),
            total_steps,
            decay_shape: self.decay.unwrap_or(d.decay_shape),
            tail_fraction: self.tail_fraction.unwrap_or(d.tail_fraction),
            detector: self.detector()?,
            warmup_growth: self.warmup.unwrap_or(d.warmup_growth),
        })
    }

    pub fn baseline(&self, batch_size: usize, total: usize, per_epoch: usize) -> BaselineConfig {
        let d = BaselineConfig::new(batch_size, total, per_epoch);
        BaselineConfig {
            eta_base: self.eta_base.unwrap_or(d.eta_base),
            reference_batch: self.reference_batch.unwrap_or(d.reference_batch),
            warmup_epochs: self.warmup_epochs.unwrap_or(d.warmup_epochs),
            peak_lr: self.peak_lr.or(d.peak_lr),
            ..d
        }
    }

    fn check_keys(&self) -> Result<(), CliError> {
        let detector_keys = [
            (self.n_test.is_some(), "n_test"),
            (self.confidence.is_some(), "confidence"),
            (self.patience.is_some(), "patience"),
            (self.fit_subsample_max.is_some(), "fit_subsample_max"),
            (self.infer_subsample_max.is_some(), "infer_subsample_max"),
            (self.grid_size.is_some(), "grid_size"),
        ];
        if self.kind != SchedulerKind::Autowu {
            if let Some((_, name)) = detector_keys.iter().find(|(set, _)| *set) {
                return Err(CliError::config(
                    format!("scheduler.{name}"),
                    "only valid with kind = \"autowu\"",
                ));
            }
        }
        for (name, kind) in self.set_keys() {
            if kind != self.kind {
                return Err(CliError::config(
                    format!("scheduler.{name}"),
                    format!("only valid with kind = \"{}\"", kind_name(kind)),
                ));
            }
        }
        Ok(())
    }
}

fn kind_name(kind: SchedulerKind) -> &'static str {
    match kind {
        SchedulerKind::Autowu => "autowu",
        SchedulerKind::Baseline => "baseline",
        SchedulerKind::Fixed => "fixed",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub peaks: Vec<f64>,
    /// Warmup lengths in epochs.
    pub warmups: Vec<usize>,
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectEvalSection {
    pub epoch_len: usize,
    /// Seeds `0..n_seeds` unless `seeds` is given.
    pub n_seeds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Empty means the scheduler's patience.
    pub patiences: Vec<usize>,
    pub trajectories: Vec<TrajectorySpec>,
}

impl Default for DetectEvalSection {
    fn default() -> Self {
        Self {
            epoch_len: 10,
            n_seeds: 100,
            seeds: None,
            patiences: Vec::new(),
            trajectories: Vec::new(),
        }
    }
}

impl DetectEvalSection {
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (0..self.n_seeds).collect())
    }
}

fn detector_error(e: DetectorError) -> CliError {
    match e {
        DetectorError::InvalidConfig { field, reason } => {
            CliError::config(format!("scheduler.{field}"), reason)
        }
        other => CliError::config("scheduler", other.to_string()),
    }
}

fn schedule_error(e: ScheduleError) -> CliError {
    match e {
        ScheduleError::InvalidConfig { field, reason } => {
            CliError::config(format!("scheduler.{field}"), reason)
        }
        ScheduleError::Detector(d) => detector_error(d),
        other => CliError::config("scheduler", other.to_string()),
    }
}

fn train_error(section: &str, e: TrainError) -> CliError {
    match e {
        TrainError::InvalidConfig { field, reason } => CliError::config(field, reason),
        TrainError::InvalidSpec(reason) => CliError::config(section, reason),
        TrainError::Schedule(s) => schedule_error(s),
        other => CliError::config(section, other.to_string()),
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config("toml", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Seeds for `run`: the override, else `seeds`, else `seed`.
    pub fn run_seeds(&self, overridden: Option<&[u64]>) -> Vec<u64> {
        overridden
            .map(<[u64]>::to_vec)
            .or_else(|| self.seeds.clone())
            .unwrap_or_else(|| vec![self.seed])
    }

    /// The same file pinned to one seed, with the seed battery removed.
    pub fn for_seed(&self, seed: u64) -> FileConfig {
        FileConfig {
            seed,
            seeds: None,
            ..self.clone()
        }
    }

    fn dataset(&self, seed: u64) -> Result<DatasetSpec, CliError> {
        let d = &self.dataset;
        let spec = DatasetSpec {
            kind: d.kind,
            n_samples: d.n_samples,
            n_features: d.n_features,
            n_classes: d.n_classes,
            noise: d.noise,
            seed: d.seed.unwrap_or(seed),
            n_eval: d.n_eval,
        };
        spec.validate().map_err(|e| train_error("dataset", e))?;
        Ok(spec)
    }

    fn model(&self, seed: u64) -> Result<ModelSpec, CliError> {
        let m = &self.model;
        let spec = ModelSpec {
            kind: m.kind,
            hidden_sizes: m.hidden_sizes.clone(),
            activation: m.activation,
            seed: m.seed.unwrap_or(seed),
        };
        spec.validate().map_err(|e| train_error("model", e))?;
        Ok(spec)
    }

    /// Validated experiment config for `seed`.
    pub fn resolve(&self, seed: u64) -> Result<ExperimentConfig, CliError> {
        self.scheduler.check_keys()?;
        let mut cfg = ExperimentConfig {
            dataset: self.dataset(seed)?,
            model: self.model(seed)?,
            optimizer: self.optimizer.resolve()?,
            scheduler: SchedulerSpec::Fixed { lr: 0.0 },
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            record_timing: self.record_timing,
        };
        let (total, per_epoch) = (cfg.total_steps(), cfg.steps_per_epoch());
        cfg.scheduler = match self.scheduler.kind {
            SchedulerKind::Autowu => SchedulerSpec::Autowu(self.scheduler.autowu(total)?),
            SchedulerKind::Baseline => {
                SchedulerSpec::Baseline(self.scheduler.baseline(self.batch_size, total, per_epoch))
            }
            SchedulerKind::Fixed => SchedulerSpec::Fixed {
                lr: self
                    .scheduler
                    .lr
                    .ok_or_else(|| CliError::config("scheduler.lr", "required with kind = \"fixed\""))?,
            },
        };
        cfg.validate().map_err(|e| train_error("experiment", e))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(r: Result<ExperimentConfig, CliError>) -> String {
        match r {
            Err(CliError::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_default_autowu() {
        let cfg = FileConfig::parse("").unwrap().resolve(0).unwrap();
        let SchedulerSpec::Autowu(a) = cfg.scheduler else { panic!() };
        assert_eq!(a.eta_min, 1e-5);
        assert_eq!(a.eta_max, 1.0);
        assert_eq!(a.rho_w, 0.5);
        assert_eq!(a.tail_fraction, 0.2);
        assert_eq!(a.detector, DetectorConfig::default());
        assert_eq!(a.total_steps, cfg.total_steps());
        assert_eq!(cfg.optimizer, OptimizerConfig::adamp());
    }

    #[test]
    fn invalid_rho_w_is_named() {
        let f = FileConfig::parse("[scheduler]\nrho_w = 1.5\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "scheduler.rho_w");
    }

    #[test]
    fn wrong_kind_keys_rejected() {
        let f = FileConfig::parse("[scheduler]\nkind = \"fixed\"\nlr = 0.1\nrho_w = 0.3\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "scheduler.rho_w");
        let f = FileConfig::parse("[scheduler]\nkind = \"fixed\"\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "scheduler.lr");
        let f = FileConfig::parse("[scheduler]\nkind = \"baseline\"\npatience = 2\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "scheduler.patience");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            FileConfig::parse("[scheduler]\nrho = 0.5\n"),
            Err(CliError::Config { .. })
        ));
    }

    #[test]
    fn other_field_errors() {
        let f = FileConfig::parse("[scheduler]\npatience = 0\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "scheduler.patience");
        let f = FileConfig::parse("batch_size = 5000\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "batch_size");
        let f = FileConfig::parse("[dataset]\nn_classes = 1\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "dataset");
        let f = FileConfig::parse("[optimizer]\nbeta1 = 1.0\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "optimizer.beta1");
        let f = FileConfig::parse("[scheduler]\nkind = \"baseline\"\nwarmup_epochs = 60\n").unwrap();
        assert_eq!(field_of(f.resolve(0)), "scheduler.warmup_epochs");
    }

    #[test]
    fn seeds_flow_into_dataset_and_model() {
        let f = FileConfig::parse("seeds = [4, 5]\n[model]\nseed = 9\n").unwrap();
        assert_eq!(f.run_seeds(None), vec![4, 5]);
        assert_eq!(f.run_seeds(Some(&[7])), vec![7]);
        let cfg = f.resolve(4).unwrap();
        assert_eq!((cfg.seed, cfg.dataset.seed, cfg.model.seed), (4, 4, 9));
    }

    #[test]
    fn round_trips_through_toml() {
        let text = "epochs = 3\n[scheduler]\nkind = \"baseline\"\npeak_lr = 0.01\n[sweep]\npeaks = [0.01]\nwarmups = [1]\n";
        let f = FileConfig::parse(text).unwrap();
        assert_eq!(FileConfig::parse(&f.to_toml()).unwrap(), f);
    }
}
