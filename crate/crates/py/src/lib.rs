//! Python bindings: the scheduler, the GP minimum test, the synthetic
//! trajectory harness and the experiment runner.

use autowu::detector::{self, DetectorConfig, LossTrajectory, MinimumDetector, TestOutcome};
use autowu::gp::{self, GpParams, NormalizedObservations};
use autowu::numerics::Rng;
use autowu::schedule::{self, AutoWuConfig, BaselineConfig, DecayShape, WarmupGrowth};
use autowu::synthgen::{self, TrajectoryShape, TrajectorySpec};
use autowu::train::TrainError;
use autowu_cli::FileConfig;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn decay_shape(name: &str) -> PyResult<DecayShape> {
    match name {
        "cosine" => Ok(DecayShape::Cosine),
        "constant_then_cosine" => Ok(DecayShape::ConstantThenCosine),
        _ => Err(PyValueError::new_err(format!("unknown decay shape {name:?}"))),
    }
}

fn trajectory_shape(name: &str) -> PyResult<TrajectoryShape> {
    match name {
        "monotone_decay" => Ok(TrajectoryShape::MonotoneDecay),
        "v_shape" => Ok(TrajectoryShape::VShape),
        "plateau" => Ok(TrajectoryShape::Plateau),
        "spiky_decay" => Ok(TrajectoryShape::SpikyDecay),
        _ => Err(PyValueError::new_err(format!("unknown trajectory shape {name:?}"))),
    }
}

fn detector_config(n_test: usize, confidence: f64, patience: usize) -> PyResult<DetectorConfig> {
    let cfg = DetectorConfig {
        n_test,
        confidence,
        patience,
        ..DetectorConfig::default()
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn autowu_config(
    total_steps: usize,
    eta_min: f64,
    eta_max: f64,
    rho_w: f64,
    decay: &str,
    tail_fraction: f64,
    detector: DetectorConfig,
    linear: bool,
) -> PyResult<AutoWuConfig> {
    let cfg = AutoWuConfig {
        eta_min,
        eta_max,
        rho_w,
        decay_shape: decay_shape(decay)?,
        tail_fraction,
        detector,
        warmup_growth: if linear { WarmupGrowth::Linear } else { WarmupGrowth::Exponential },
        ..AutoWuConfig::new(total_steps)
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Warmup LR `eta_min·γ^t` at step `t`.
#[pyfunction]
#[pyo3(signature = (t, total_steps, eta_min=1e-5, eta_max=1.0, rho_w=0.5))]
fn warmup_lr(t: usize, total_steps: usize, eta_min: f64, eta_max: f64, rho_w: f64) -> PyResult<f64> {
    let cfg = autowu_config(total_steps, eta_min, eta_max, rho_w, "cosine", 0.2, DetectorConfig::default(), false)?;
    Ok(schedule::warmup_lr(t, &cfg))
}

#[pyfunction]
#[pyo3(signature = (t, switch_step, start_lr, total_steps, shape="cosine", tail_fraction=0.2))]
fn decay_lr(
    t: usize,
    switch_step: usize,
    start_lr: f64,
    total_steps: usize,
    shape: &str,
    tail_fraction: f64,
) -> PyResult<f64> {
    if switch_step > t || t > total_steps {
        return Err(PyValueError::new_err("need switch_step <= t <= total_steps"));
    }
    let cfg = AutoWuConfig {
        decay_shape: decay_shape(shape)?,
        tail_fraction,
        ..AutoWuConfig::new(total_steps)
    };
    Ok(schedule::decay_lr(t, switch_step, start_lr, &cfg))
}

/// Linear warmup to a square-root-scaled peak, then cosine.
#[pyfunction]
#[pyo3(signature = (t, batch_size, total_steps, steps_per_epoch, warmup_epochs=5, peak_lr=None))]
fn baseline_lr(
    t: usize,
    batch_size: usize,
    total_steps: usize,
    steps_per_epoch: usize,
    warmup_epochs: usize,
    peak_lr: Option<f64>,
) -> PyResult<f64> {
    let cfg = BaselineConfig {
        warmup_epochs,
        peak_lr,
        ..BaselineConfig::new(batch_size, total_steps, steps_per_epoch)
    };
    cfg.validate().map_err(value_err)?;
    Ok(schedule::baseline_lr(t, &cfg))
}

#[pyclass(name = "GpParams", get_all)]
struct PyGpParams {
    mean: f64,
    signal_std: f64,
    noise_std: f64,
}

impl PyGpParams {
    fn inner(&self) -> GpParams {
        GpParams::new(self.mean, self.signal_std, self.noise_std)
    }
}

#[pymethods]
impl PyGpParams {
    #[new]
    fn new(mean: f64, signal_std: f64, noise_std: f64) -> Self {
        Self { mean, signal_std, noise_std }
    }

    fn __repr__(&self) -> String {
        format!(
            "GpParams(mean={}, signal_std={}, noise_std={})",
            self.mean, self.signal_std, self.noise_std
        )
    }
}

impl From<GpParams> for PyGpParams {
    fn from(p: GpParams) -> Self {
        Self {
            mean: p.mean,
            signal_std: p.signal_std(),
            noise_std: p.noise_std(),
        }
    }
}

fn observations(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<NormalizedObservations> {
    NormalizedObservations::new(xs, ys).map_err(value_err)
}

/// Fits mean, signal and noise scale by maximising the log marginal likelihood.
/// `xs` must lie in `[0, 1]`.
#[pyfunction]
fn gp_fit(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<PyGpParams> {
    let obs = observations(xs, ys)?;
    gp::fit(&obs).map(Into::into).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn log_marginal_likelihood(xs: Vec<f64>, ys: Vec<f64>, params: &PyGpParams) -> PyResult<f64> {
    let obs = observations(xs, ys)?;
    gp::log_marginal_likelihood(&obs, &params.inner())
        .map(|(lml, _)| lml)
        .map_err(value_err)
}

#[pyclass(name = "Posterior", get_all)]
struct PyPosterior {
    grid: Vec<f64>,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    p_min: f64,
    argmin: f64,
}

/// Posterior of the latent curve on a uniform grid over `[0, 1]`, with the
/// probability that the minimum lies before the last grid point.
#[pyfunction]
#[pyo3(signature = (xs, ys, params, grid_size=500))]
fn gp_posterior(xs: Vec<f64>, ys: Vec<f64>, params: &PyGpParams, grid_size: usize) -> PyResult<PyPosterior> {
    if grid_size < 2 {
        return Err(PyValueError::new_err("grid_size must be at least 2"));
    }
    let obs = observations(xs, ys)?;
    let post = gp::posterior(&obs, &params.inner(), grid_size).map_err(value_err)?;
    let g = post.grid.len();
    Ok(PyPosterior {
        p_min: gp::p_min(&post),
        argmin: gp::argmin_mean(&post),
        cov: (0..g).map(|i| (0..g).map(|j| post.cov[(i, j)]).collect()).collect(),
        grid: post.grid,
        mean: post.mean,
    })
}

#[pyclass(name = "TestOutcome", get_all)]
struct PyTestOutcome {
    step: usize,
    p_min_values: Vec<f64>,
    argmins: Vec<f64>,
    detected: bool,
    fit_diverged: bool,
    /// Filled in by `MinimumDetector.end_epoch`.
    switch_now: bool,
    t_star: Option<usize>,
    patience_flag: usize,
}

impl PyTestOutcome {
    fn from_outcome(o: TestOutcome) -> Self {
        Self {
            step: o.step,
            p_min_values: o.p_min_values,
            argmins: o.argmins,
            detected: o.detected,
            fit_diverged: o.fit_diverged,
            switch_now: false,
            t_star: None,
            patience_flag: 0,
        }
    }
}

/// One subsampled end-of-epoch test on a loss trajectory.
#[pyfunction]
#[pyo3(signature = (losses, seed=0, n_test=5, confidence=0.95))]
fn epoch_test(losses: Vec<f64>, seed: u64, n_test: usize, confidence: f64) -> PyResult<PyTestOutcome> {
    let cfg = detector_config(n_test, confidence, 1)?;
    let traj = LossTrajectory::from_losses(losses).map_err(value_err)?;
    let outcome = detector::epoch_test(&traj, &cfg, &mut Rng::new(seed)).map_err(value_err)?;
    Ok(PyTestOutcome::from_outcome(outcome))
}

#[pyclass(name = "MinimumDetector")]
struct PyMinimumDetector {
    inner: MinimumDetector,
    rng: Rng,
}

#[pymethods]
impl PyMinimumDetector {
    #[new]
    #[pyo3(signature = (seed=0, n_test=5, confidence=0.95, patience=3))]
    fn new(seed: u64, n_test: usize, confidence: f64, patience: usize) -> PyResult<Self> {
        let cfg = detector_config(n_test, confidence, patience)?;
        Ok(Self {
            inner: MinimumDetector::new(cfg).map_err(value_err)?,
            rng: Rng::new(seed),
        })
    }

    fn record(&mut self, loss: f64) -> PyResult<()> {
        self.inner.record(loss).map_err(value_err)
    }

    /// Runs the test; `None` while fewer than two losses are recorded.
    fn end_epoch(&mut self) -> PyResult<Option<PyTestOutcome>> {
        let res = self.inner.end_epoch(&mut self.rng).map_err(value_err)?;
        Ok(res.map(|(o, d)| PyTestOutcome {
            switch_now: d.switch_now,
            t_star: d.t_star,
            patience_flag: d.patience_flag,
            ..PyTestOutcome::from_outcome(o)
        }))
    }

    #[getter]
    fn patience_flag(&self) -> usize {
        self.inner.patience_flag()
    }

    fn __len__(&self) -> usize {
        self.inner.trajectory().len()
    }
}

/// Exponential warmup until the minimum test fires, then decay from the LR
/// that was active at the estimated minimum.
#[pyclass(name = "AutoWu")]
struct PyAutoWu {
    inner: schedule::AutoWu,
    rng: Rng,
}

#[pymethods]
impl PyAutoWu {
    #[new]
    #[pyo3(signature = (total_steps, eta_min=1e-5, eta_max=1.0, rho_w=0.5, decay="cosine",
                        tail_fraction=0.2, patience=3, n_test=5, confidence=0.95, linear_warmup=false, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        total_steps: usize,
        eta_min: f64,
        eta_max: f64,
        rho_w: f64,
        decay: &str,
        tail_fraction: f64,
        patience: usize,
        n_test: usize,
        confidence: f64,
        linear_warmup: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let det = detector_config(n_test, confidence, patience)?;
        let cfg = autowu_config(total_steps, eta_min, eta_max, rho_w, decay, tail_fraction, det, linear_warmup)?;
        Ok(Self {
            inner: schedule::AutoWu::new(cfg).map_err(value_err)?,
            rng: Rng::new(seed),
        })
    }

    /// Feeds the current step's loss and returns the next LR.
    #[pyo3(signature = (loss, epoch_end=false))]
    fn step(&mut self, loss: f64, epoch_end: bool) -> PyResult<f64> {
        let report = self.inner.step(loss, epoch_end, &mut self.rng).map_err(value_err)?;
        Ok(report.lr)
    }

    #[getter]
    fn lr(&self) -> f64 {
        self.inner.lr()
    }

    #[getter]
    fn phase(&self) -> &'static str {
        self.inner.phase().name()
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.inner.state().step
    }

    #[getter]
    fn switch_step(&self) -> Option<usize> {
        self.inner.state().switch_step
    }

    #[getter]
    fn t_star(&self) -> Option<usize> {
        self.inner.state().t_star
    }

    #[getter]
    fn decay_start_lr(&self) -> Option<f64> {
        self.inner.state().decay_start_lr
    }

    #[getter]
    fn forced_switch(&self) -> bool {
        self.inner.state().forced_switch
    }

    #[getter]
    fn warmup_steps(&self) -> usize {
        self.inner.config().warmup_steps()
    }
}

fn trajectory_spec(
    shape: &str,
    length: usize,
    noise_rel: f64,
    spike_prob: f64,
    spike_magnitude: f64,
    min_fraction: f64,
    seed: u64,
) -> PyResult<TrajectorySpec> {
    let spec = TrajectorySpec {
        noise_rel,
        spike_prob,
        spike_magnitude,
        min_fraction,
        seed,
        ..TrajectorySpec::new(trajectory_shape(shape)?, length)
    };
    spec.validate().map_err(value_err)?;
    Ok(spec)
}

/// Returns `(losses, t_true)`.
#[pyfunction]
#[pyo3(signature = (shape, length, noise_rel=0.0, spike_prob=0.0, spike_magnitude=0.0, min_fraction=0.5, seed=0))]
fn gen_trajectory(
    shape: &str,
    length: usize,
    noise_rel: f64,
    spike_prob: f64,
    spike_magnitude: f64,
    min_fraction: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Option<usize>)> {
    let spec = trajectory_spec(shape, length, noise_rel, spike_prob, spike_magnitude, min_fraction, seed)?;
    let traj = synthgen::gen_trajectory(&spec).map_err(value_err)?;
    Ok((traj.losses().to_vec(), spec.true_minimum()))
}

#[pyclass(name = "DetectionReport", get_all)]
struct PyDetectionReport {
    patience: usize,
    n_records: usize,
    detection_rate: f64,
    false_positive_rate: f64,
    mean_t_star_error: f64,
    mean_latency_epochs: f64,
    /// Switch step per seed, `None` where the detector never fired.
    switch_steps: Vec<Option<usize>>,
}

/// Detector statistics over seeded draws of one trajectory shape, one report
/// per patience.
#[pyfunction]
#[pyo3(signature = (shape, length, seeds, epoch_len=10, patiences=vec![3], noise_rel=0.0,
                    spike_prob=0.0, spike_magnitude=0.0, min_fraction=0.5))]
#[allow(clippy::too_many_arguments)]
fn evaluate_detector(
    shape: &str,
    length: usize,
    seeds: Vec<u64>,
    epoch_len: usize,
    patiences: Vec<usize>,
    noise_rel: f64,
    spike_prob: f64,
    spike_magnitude: f64,
    min_fraction: f64,
) -> PyResult<Vec<PyDetectionReport>> {
    let spec = trajectory_spec(shape, length, noise_rel, spike_prob, spike_magnitude, min_fraction, 0)?;
    let reports = synthgen::evaluate_patience(&[spec], &DetectorConfig::default(), epoch_len, &seeds, &patiences)
        .map_err(value_err)?;
    Ok(reports
        .into_iter()
        .zip(patiences)
        .map(|(r, patience)| PyDetectionReport {
            patience,
            n_records: r.records.len(),
            detection_rate: r.detection_rate,
            false_positive_rate: r.false_positive_rate,
            mean_t_star_error: r.mean_t_star_error,
            mean_latency_epochs: r.mean_latency_epochs,
            switch_steps: r.records.iter().map(|s| s.switch_step).collect(),
        })
        .collect())
}

#[pyclass(name = "ExperimentLog", get_all)]
struct PyExperimentLog {
    lr: Vec<f64>,
    train_loss: Vec<f64>,
    phase: Vec<&'static str>,
    eval_loss: Vec<f64>,
    eval_acc: Vec<f64>,
    switch_step: Option<usize>,
    t_star: Option<usize>,
    decay_start_lr: Option<f64>,
    forced_switch: bool,
    final_train_loss: f64,
    final_train_acc: f64,
    diverged_at: Option<usize>,
}

/// Trains the model described by a run config (same TOML schema as the
/// command-line tool). A diverged run still returns its partial log.
#[pyfunction]
#[pyo3(signature = (config_toml, seed=None))]
fn run_experiment(py: Python<'_>, config_toml: &str, seed: Option<u64>) -> PyResult<PyExperimentLog> {
    let file = FileConfig::parse(config_toml).map_err(value_err)?;
    let cfg = file.resolve(seed.unwrap_or(file.seed)).map_err(value_err)?;
    let log = match py.detach(|| autowu::train::run_experiment(&cfg)) {
        Ok(log) => log,
        Err(TrainError::Diverged { log, .. }) => *log,
        Err(e) => return Err(PyRuntimeError::new_err(e.to_string())),
    };
    Ok(PyExperimentLog {
        lr: log.steps.iter().map(|s| s.lr).collect(),
        train_loss: log.steps.iter().map(|s| s.train_loss).collect(),
        phase: log.steps.iter().map(|s| s.phase.name()).collect(),
        eval_loss: log.epochs.iter().map(|e| e.eval_loss).collect(),
        eval_acc: log.epochs.iter().map(|e| e.eval_acc).collect(),
        switch_step: log.switch.map(|s| s.step),
        t_star: log.switch.map(|s| s.t_star),
        decay_start_lr: log.switch.map(|s| s.decay_start_lr),
        forced_switch: log.switch.is_some_and(|s| s.forced),
        final_train_loss: log.final_train_loss,
        final_train_acc: log.final_train_acc,
        diverged_at: log.diverged_at,
    })
}

#[pymodule]
fn pyautowu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", autowu::VERSION)?;
    m.add_function(wrap_pyfunction!(warmup_lr, m)?)?;
    m.add_function(wrap_pyfunction!(decay_lr, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_lr, m)?)?;
    m.add_function(wrap_pyfunction!(gp_fit, m)?)?;
    m.add_function(wrap_pyfunction!(log_marginal_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(gp_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(epoch_test, m)?)?;
    m.add_function(wrap_pyfunction!(gen_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_detector, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyGpParams>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PyTestOutcome>()?;
    m.add_class::<PyMinimumDetector>()?;
    m.add_class::<PyAutoWu>()?;
    m.add_class::<PyDetectionReport>()?;
    m.add_class::<PyExperimentLog>()?;
    Ok(())
}
