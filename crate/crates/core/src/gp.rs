//! Gaussian-process smoothing of a loss trajectory.
//!
//! The model is `L_s = f(s/t) + ε` with a constant mean `θ`, a
//! squared-exponential kernel of fixed length-scale 0.2, and homoskedastic
//! noise `σ_n`. Hyperparameters `(θ, log σ_f, log σ_n)` are fitted by 100 Adam
//! steps on the marginal likelihood; the posterior over a uniform grid on
//! `[0, 1]` then feeds the minimum-probability statistic [`p_min`] and the
//! switch-point estimate [`argmin_mean`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, cholesky, dot, Cholesky, Matrix, NumericsError};
use crate::optim::{adam_step, OptimizerConfig, ParamGroup};

/// Kernel length-scale; never fitted.
pub const LENGTH_SCALE: f64 = 0.2;
pub const DEFAULT_GRID_SIZE: usize = 500;
pub const FIT_STEPS: usize = 100;
pub const FIT_LR: f64 = 0.01;
/// Below this variance the difference `f(x) − f(1)` is treated as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("need at least {required} observations, got {n}")]
    InsufficientData { n: usize, required: usize },
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error("grid must have at least 2 points, got {0}")]
    InvalidGrid(usize),
    #[error("hyperparameter fit diverged at Adam step {step}")]
    FitDiverged { step: usize },
}

/// Hyperparameters, with the positive scales stored as logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub mean: f64,
    pub log_signal_std: f64,
    pub log_noise_std: f64,
}

impl GpParams {
    pub fn new(mean: f64, signal_std: f64, noise_std: f64) -> Self {
        assert!(signal_std > 0.0 && noise_std > 0.0, "scales must be positive");
        Self {
            mean,
            log_signal_std: signal_std.ln(),
            log_noise_std: noise_std.ln(),
        }
    }

    pub fn signal_std(&self) -> f64 {
        self.log_signal_std.exp()
    }

    pub fn noise_std(&self) -> f64 {
        self.log_noise_std.exp()
    }

    pub fn length_scale(&self) -> f64 {
        LENGTH_SCALE
    }

    fn to_vec(self) -> Vec<f64> {
        vec![self.mean, self.log_signal_std, self.log_noise_std]
    }

    fn from_slice(v: &[f64]) -> Self {
        Self {
            mean: v[0],
            log_signal_std: v[1],
            log_noise_std: v[2],
        }
    }
}

/// Loss observations with inputs normalized to `[0, 1]`.
///
/// Inputs must be non-decreasing; ties are allowed (duplicated inputs are a
/// legitimate degenerate case for the likelihood).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedObservations {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl NormalizedObservations {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, GpError> {
        if xs.len() != ys.len() {
            return Err(GpError::InvalidObservations(format!(
                "{} inputs but {} targets",
                xs.len(),
                ys.len()
            )));
        }
        if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(GpError::InvalidObservations(format!("input {x} outside [0, 1]")));
        }
        if xs.windows(2).any(|w| w[1] < w[0]) {
            return Err(GpError::InvalidObservations("inputs are not sorted".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(GpError::InvalidObservations("non-finite target".into()));
        }
        Ok(Self { xs, ys })
    }

    /// Normalizes `steps` by `t`: `x = s / t`.
    pub fn from_steps(steps: &[usize], losses: &[f64], t: usize) -> Result<Self, GpError> {
        if t == 0 {
            return Err(GpError::InvalidObservations("normalizer t must be positive".into()));
        }
        let xs = steps.iter().map(|&s| s as f64 / t as f64).collect();
        Self::new(xs, losses.to_vec())
    }

    pub fn empty() -> Self {
        Self {
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// `σ_f² · exp(−(a − b)² / 2ℓ²)` for every pair.
pub fn kernel_matrix(xs_a: &[f64], xs_b: &[f64], params: &GpParams) -> Matrix {
    let sf2 = params.signal_std().powi(2);
    let inv = 1.0 / (2.0 * LENGTH_SCALE * LENGTH_SCALE);
    Matrix::from_fn(xs_a.len(), xs_b.len(), |i, j| {
        let d = xs_a[i] - xs_b[j];
        sf2 * (-d * d * inv).exp()
    })
}

fn unit_kernel(xs_a: &[f64], xs_b: &[f64]) -> Matrix {
    kernel_matrix(xs_a, xs_b, &GpParams::new(0.0, 1.0, 1.0))
}

fn train_covariance(xs: &[f64], params: &GpParams) -> Matrix {
    let mut k = kernel_matrix(xs, xs, params);
    let sn2 = params.noise_std().powi(2);
    for i in 0..xs.len() {
        k[(i, i)] += sn2;
    }
    k
}

/// Log marginal likelihood and its gradient with respect to
/// `(θ, log σ_f, log σ_n)`, both through the Cholesky factor of
/// `K + σ_n² I`.
pub fn log_marginal_likelihood(
    obs: &NormalizedObservations,
    params: &GpParams,
) -> Result<(f64, [f64; 3]), GpError> {
    let n = obs.len();
    if n == 0 {
        return Err(GpError::InsufficientData { n, required: 1 });
    }
    let chol = cholesky(&train_covariance(obs.xs(), params), 0.0)?;
    let resid: Vec<f64> = obs.ys().iter().map(|y| y - params.mean).collect();
    let alpha = chol.solve(&resid);
    let fit = dot(&resid, &alpha);
    let value = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;

    // K = K_f + s·I with s = σ_n² + jitter, so tr(K⁻¹K_f) = n − s·tr(K⁻¹)
    // and αᵀK_fα = αᵀr − s·αᵀα.
    let sn2 = params.noise_std().powi(2);
    let s = sn2 + chol.jitter();
    let tr_inv = chol.inverse_trace();
    let aa = dot(&alpha, &alpha);
    let d_mean: f64 = alpha.iter().sum();
    let d_signal = fit - s * aa - n as f64 + s * tr_inv;
    let d_noise = sn2 * (aa - tr_inv);
    Ok((value, [d_mean, d_signal, d_noise]))
}

/// The likelihood in the eigenbasis of the unit-scale Gram matrix.
///
/// With `ℓ` fixed, `K = σ_f² Q Λ Qᵀ + σ_n² I` for one decomposition per
/// observation set, so each fitting step costs O(n).
struct SpectralLikelihood {
    eigenvalues: Vec<f64>,
    proj_y: Vec<f64>,
    proj_ones: Vec<f64>,
}

impl SpectralLikelihood {
    fn new(obs: &NormalizedObservations) -> Result<Self, GpError> {
        let (vals, vecs) = numerics::symmetric_eigen(&unit_kernel(obs.xs(), obs.xs()))?;
        let n = obs.len();
        let mut proj_y = vec![0.0; n];
        let mut proj_ones = vec![0.0; n];
        for i in 0..n {
            let row = vecs.row(i);
            let y = obs.ys()[i];
            for k in 0..n {
                proj_y[k] += row[k] * y;
                proj_ones[k] += row[k];
            }
        }
        Ok(Self {
            eigenvalues: vals.into_iter().map(|v| v.max(0.0)).collect(),
            proj_y,
            proj_ones,
        })
    }

    fn evaluate(&self, params: &GpParams) -> (f64, [f64; 3]) {
        let sf2 = params.signal_std().powi(2);
        let sn2 = params.noise_std().powi(2);
        let n = self.eigenvalues.len();
        let (mut fit, mut logdet) = (0.0, 0.0);
        let mut grad = [0.0; 3];
        for k in 0..n {
            let lam = self.eigenvalues[k];
            let d = sf2 * lam + sn2;
            let r = self.proj_y[k] - params.mean * self.proj_ones[k];
            let a = r / d;
            fit += r * a;
            logdet += d.ln();
            let g = a * a - 1.0 / d;
            grad[0] += self.proj_ones[k] * a;
            grad[1] += sf2 * lam * g;
            grad[2] += sn2 * g;
        }
        (-0.5 * fit - 0.5 * logdet - 0.5 * n as f64 * LN_2PI, grad)
    }
}

/// Starting point for [`fit`]: `θ₀ = mean(y)`; `σ_n₀` from the mean squared
/// first difference; `σ_f₀` from the variance left over, floored at
/// `max(0.1·σ_n₀, 1e-4)`.
///
/// The fit only moves each log-scale by about one unit in its step budget,
/// so the start has to be close to the noise level already.
pub fn initial_params(obs: &NormalizedObservations) -> GpParams {
    let ys = obs.ys();
    let n = ys.len().max(1) as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    // First differences along x cancel the smooth part and keep the noise.
    let diff_sq: f64 = ys.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let noise_var = if ys.len() > 1 {
        diff_sq / (2.0 * (ys.len() - 1) as f64)
    } else {
        0.0
    };
    let sn = noise_var.sqrt().max(1e-5);
    let sf = (var - noise_var).max(0.0).sqrt().max(0.1 * sn).max(1e-4);
    GpParams::new(mean, sf, sn)
}

/// Maximizes the marginal likelihood with exactly [`FIT_STEPS`] Adam steps at
/// learning rate [`FIT_LR`].
pub fn fit(obs: &NormalizedObservations) -> Result<GpParams, GpError> {
    if obs.len() < 2 {
        return Err(GpError::InsufficientData {
            n: obs.len(),
            required: 2,
        });
    }
    let spectral = SpectralLikelihood::new(obs)?;
    let cfg = OptimizerConfig::adam();
    let mut group = ParamGroup::new("gp", initial_params(obs).to_vec());
    for step in 0..FIT_STEPS {
        let params = GpParams::from_slice(&group.values);
        let (value, grad) = spectral.evaluate(&params);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(GpError::FitDiverged { step });
        }
        let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam_step(&mut group, &ascent, FIT_LR, &cfg).expect("fixed shape");
    }
    let out = GpParams::from_slice(&group.values);
    if group.values.iter().any(|v| !v.is_finite()) {
        return Err(GpError::FitDiverged { step: FIT_STEPS });
    }
    Ok(out)
}

/// `n` equally spaced points on `[0, 1]`, both endpoints included exactly.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|i| i as f64 / last).collect()
}

/// Predictive distribution of the latent `f` over a grid.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// Marginals of the posterior plus each point's covariance with the final
/// grid point: all that [`p_min`] and [`argmin_mean`] need.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub cov_last: Vec<f64>,
}

struct Conditioned {
    grid: Vec<f64>,
    mean: Vec<f64>,
    /// `L⁻¹ K(x, grid)`, or `None` when conditioning on nothing.
    reduced: Option<Matrix>,
    prior: GpParams,
}

fn condition(
    obs: &NormalizedObservations,
    params: &GpParams,
    grid_size: usize,
) -> Result<Conditioned, GpError> {
    if grid_size < 2 {
        return Err(GpError::InvalidGrid(grid_size));
    }
    let grid = uniform_grid(grid_size);
    if obs.is_empty() {
        return Ok(Conditioned {
            mean: vec![params.mean; grid_size],
            grid,
            reduced: None,
            prior: *params,
        });
    }
    let chol: Cholesky = cholesky(&train_covariance(obs.xs(), params), 0.0)?;
    let resid: Vec<f64> = obs.ys().iter().map(|y| y - params.mean).collect();
    let alpha = chol.solve(&resid);
    let cross = kernel_matrix(obs.xs(), &grid, params);
    let mut mean = vec![params.mean; grid_size];
    for (i, a) in alpha.iter().enumerate() {
        numerics::axpy(*a, cross.row(i), &mut mean);
    }
    let reduced = chol.solve_lower_matrix(&cross);
    Ok(Conditioned {
        grid,
        mean,
        reduced: Some(reduced),
        prior: *params,
    })
}

/// Full posterior with dense covariance. Noise enters the training
/// covariance only, so this is the posterior of `f`, not of `L`.
pub fn posterior(
    obs: &NormalizedObservations,
    params: &GpParams,
    grid_size: usize,
) -> Result<GpPosterior, GpError> {
    let c = condition(obs, params, grid_size)?;
    let mut cov = kernel_matrix(&c.grid, &c.grid, &c.prior);
    if let Some(v) = &c.reduced {
        let g = c.grid.len();
        for k in 0..v.rows() {
            let row = v.row(k);
            for i in 0..g {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                numerics::axpy(-ri, &row[..=i], &mut cov.row_mut(i)[..=i]);
            }
        }
        for i in 0..g {
            for j in 0..i {
                cov[(j, i)] = cov[(i, j)];
            }
            if cov[(i, i)] < 0.0 {
                cov[(i, i)] = 0.0;
            }
        }
    }
    Ok(GpPosterior {
        grid: c.grid,
        mean: c.mean,
        cov,
    })
}

/// Same conditioning as [`posterior`] without forming the dense covariance.
pub fn posterior_summary(
    obs: &NormalizedObservations,
    params: &GpParams,
    grid_size: usize,
) -> Result<PosteriorSummary, GpError> {
    let c = condition(obs, params, grid_size)?;
    let g = c.grid.len();
    let last = g - 1;
    let sf2 = c.prior.signal_std().powi(2);
    let mut var = vec![sf2; g];
    let mut cov_last = kernel_matrix(&c.grid, &c.grid[last..], &c.prior).data().to_vec();
    if let Some(v) = &c.reduced {
        for k in 0..v.rows() {
            let row = v.row(k);
            let r_last = row[last];
            for i in 0..g {
                var[i] -= row[i] * row[i];
                cov_last[i] -= row[i] * r_last;
            }
        }
    }
    var.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(PosteriorSummary {
        grid: c.grid,
        mean: c.mean,
        var,
        cov_last,
    })
}

impl GpPosterior {
    pub fn summary(&self) -> PosteriorSummary {
        let last = self.grid.len() - 1;
        PosteriorSummary {
            grid: self.grid.clone(),
            mean: self.mean.clone(),
            var: self.cov.diagonal(),
            cov_last: (0..self.grid.len()).map(|i| self.cov[(i, last)]).collect(),
        }
    }
}

impl PosteriorSummary {
    /// `max_x P(f(x) < f(1))` over every grid point except `x = 1` itself.
    pub fn p_min(&self) -> f64 {
        let last = self.grid.len() - 1;
        let (m1, v1) = (self.mean[last], self.var[last]);
        let mut best = 0.0f64;
        for i in 0..last {
            let mu = self.mean[i] - m1;
            let var = self.var[i] + v1 - 2.0 * self.cov_last[i];
            let p = if var <= DEGENERATE_VARIANCE {
                if mu < 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                numerics::normal_cdf(-mu / var.sqrt())
            };
            best = best.max(p);
        }
        best
    }

    /// Grid point of minimal posterior mean; ties go to the smallest `x`.
    pub fn argmin_mean(&self) -> f64 {
        let mut best = 0;
        for (i, m) in self.mean.iter().enumerate() {
            if *m < self.mean[best] {
                best = i;
            }
        }
        self.grid[best]
    }
}

pub fn p_min(post: &GpPosterior) -> f64 {
    post.summary().p_min()
}

pub fn argmin_mean(post: &GpPosterior) -> f64 {
    post.summary().argmin_mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    /// Gauss-Jordan inverse with partial pivoting; test oracle only.
    fn dense_inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
                .unwrap();
            for j in 0..n {
                let (t1, t2) = (m[(col, j)], inv[(col, j)]);
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = t1;
                inv[(col, j)] = inv[(pivot, j)];
                inv[(pivot, j)] = t2;
            }
            let p = m[(col, col)];
            for j in 0..n {
                m[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for i in 0..n {
                if i != col {
                    let f = m[(i, col)];
                    for j in 0..n {
                        m[(i, j)] -= f * m[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
        inv
    }

    pub(crate) fn random_instance(rng: &mut Rng, n: usize) -> (NormalizedObservations, GpParams) {
        let mut xs: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        xs.sort_by(f64::total_cmp);
        let ys = xs.iter().map(|x| (3.0 * x).sin() + 0.3 * rng.normal()).collect();
        let params = GpParams::new(
            rng.uniform_range(-0.5, 0.5),
            rng.uniform_range(0.5, 1.5),
            rng.uniform_range(0.1, 0.5),
        );
        (NormalizedObservations::new(xs, ys).unwrap(), params)
    }

    #[test]
    fn kernel_values() {
        let p = GpParams::new(0.0, 1.0, 0.1);
        assert_eq!(kernel_matrix(&[0.3], &[0.3], &p)[(0, 0)], 1.0);
        let k = kernel_matrix(&[0.1], &[0.3], &p)[(0, 0)];
        assert!((k - (-0.5f64).exp()).abs() < 1e-12);
        assert!((k - 0.606_530_66).abs() < 1e-8);
        assert!(kernel_matrix(&[0.0], &[5.0], &p)[(0, 0)] <= 1e-100);
    }

    #[test]
    fn lml_single_observation_closed_form() {
        let p = GpParams::new(0.7, 1.0, 1.0);
        let obs = NormalizedObservations::new(vec![0.5], vec![0.7]).unwrap();
        let (v, _) = log_marginal_likelihood(&obs, &p).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    fn lml_value(obs: &NormalizedObservations, v: [f64; 3]) -> f64 {
        log_marginal_likelihood(obs, &GpParams::from_slice(&v)).unwrap().0
    }

    fn check_gradient(obs: &NormalizedObservations, p: &GpParams) -> Result<(), String> {
        let (_, grad) = log_marginal_likelihood(obs, p).unwrap();
        let base = p.to_vec();
        for k in 0..3 {
            let h = 1e-5;
            let mut up = [base[0], base[1], base[2]];
            let mut dn = up;
            up[k] += h;
            dn[k] -= h;
            let fd = (lml_value(obs, up) - lml_value(obs, dn)) / (2.0 * h);
            let err = (fd - grad[k]).abs() / grad[k].abs().max(1.0);
            if err > 1e-5 {
                return Err(format!("component {k}: analytic {} fd {fd}", grad[k]));
            }
        }
        Ok(())
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let (obs, p) = random_instance(&mut rng, 4);
        check_gradient(&obs, &p).unwrap();
    }

    #[test]
    fn lml_duplicated_inputs_stay_finite() {
        let obs = NormalizedObservations::new(vec![0.4, 0.4], vec![1.0, 2.0]).unwrap();
        let p = GpParams::new(0.0, 1.0, 1e-12);
        let (v, g) = log_marginal_likelihood(&obs, &p).unwrap();
        assert!(v.is_finite());
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn spectral_route_matches_cholesky_route() {
        let mut rng = Rng::new(5);
        for n in [2, 5, 17, 40] {
            let (obs, p) = random_instance(&mut rng, n);
            let (v1, g1) = log_marginal_likelihood(&obs, &p).unwrap();
            let (v2, g2) = SpectralLikelihood::new(&obs).unwrap().evaluate(&p);
            assert!((v1 - v2).abs() < 1e-8 * v1.abs().max(1.0), "n={n}: {v1} vs {v2}");
            for k in 0..3 {
                assert!((g1[k] - g2[k]).abs() < 1e-7 * g1[k].abs().max(1.0), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn fit_recovers_constant_mean() {
        let mut rng = Rng::new(3);
        let xs = uniform_grid(60);
        let ys = xs.iter().map(|_| 3.0 + 0.01 * rng.normal()).collect();
        let obs = NormalizedObservations::new(xs, ys).unwrap();
        let p = fit(&obs).unwrap();
        assert!((p.mean - 3.0).abs() < 0.1);
        assert_eq!(p.length_scale(), 0.2);
    }

    #[test]
    fn fit_needs_two_points() {
        let obs = NormalizedObservations::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(fit(&obs), Err(GpError::InsufficientData { n: 1, required: 2 })));
    }

    /// Draws `y ~ GP(0, σ_f=1, ℓ=0.2) + N(0, 0.1²)` on 200 points.
    fn synthetic_gp(seed: u64) -> NormalizedObservations {
        let mut rng = Rng::new(seed);
        let xs = uniform_grid(200);
        let k = kernel_matrix(&xs, &xs, &GpParams::new(0.0, 1.0, 1.0));
        let l = cholesky(&k, 1e-10).unwrap();
        let z: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let f = l.factor().mul_vec(&z);
        let ys = f.iter().map(|v| v + 0.1 * rng.normal()).collect();
        NormalizedObservations::new(xs, ys).unwrap()
    }

    #[test]
    fn fit_recovers_scales_from_synthetic_gp() {
        let mut hits = 0;
        for seed in 0..20 {
            let p = fit(&synthetic_gp(seed)).unwrap();
            let sf_ok = (0.5..=2.0).contains(&p.signal_std());
            let sn_ok = (0.05..=0.2).contains(&p.noise_std());
            if sf_ok && sn_ok {
                hits += 1;
            }
        }
        assert!(hits >= 16, "recovered {hits}/20");
    }

    #[test]
    fn posterior_interpolates_without_noise() {
        let obs = NormalizedObservations::new(vec![0.0, 0.25, 0.5, 1.0], vec![1.0, 0.2, -0.4, 0.9])
            .unwrap();
        let p = GpParams::new(0.0, 1.0, 1e-5);
        let post = posterior(&obs, &p, 5).unwrap();
        for (x, y) in obs.xs().iter().zip(obs.ys()) {
            let i = post.grid.iter().position(|g| g == x).unwrap();
            assert!((post.mean[i] - y).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn posterior_reverts_to_prior_far_from_data() {
        let obs = NormalizedObservations::new(vec![0.0], vec![1.1]).unwrap();
        let p = GpParams::new(1.0, 1.3, 0.1);
        let post = posterior(&obs, &p, 11).unwrap();
        // x = 1 is 5ℓ from the data
        assert!((post.mean[10] - 1.0).abs() < 1e-6);
        assert!((post.cov[(10, 10)] - 1.69).abs() < 1e-6);
    }

    #[test]
    fn posterior_matches_dense_inverse_oracle() {
        let mut rng = Rng::new(99);
        let (obs, p) = random_instance(&mut rng, 6);
        let post = posterior(&obs, &p, 10).unwrap();
        let grid = uniform_grid(10);
        let mut k = kernel_matrix(obs.xs(), obs.xs(), &p);
        for i in 0..obs.len() {
            k[(i, i)] += p.noise_std().powi(2);
        }
        let kinv = dense_inverse(&k);
        let ks = kernel_matrix(obs.xs(), &grid, &p);
        let kss = kernel_matrix(&grid, &grid, &p);
        let resid: Vec<f64> = obs.ys().iter().map(|y| y - p.mean).collect();
        let w = kinv.mul_vec(&resid);
        let tmp = ks.transpose().matmul(&kinv).matmul(&ks);
        for i in 0..10 {
            let m = p.mean + (0..obs.len()).map(|a| ks[(a, i)] * w[a]).sum::<f64>();
            assert!((post.mean[i] - m).abs() < 1e-8);
            for j in 0..10 {
                assert!((post.cov[(i, j)] - (kss[(i, j)] - tmp[(i, j)])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn empty_observations_give_the_prior() {
        let p = GpParams::new(0.4, 0.8, 0.1);
        let post = posterior(&NormalizedObservations::empty(), &p, 6).unwrap();
        let prior = kernel_matrix(&post.grid, &post.grid, &p);
        assert!(post.mean.iter().all(|m| *m == 0.4));
        assert_eq!(post.cov, prior);
        assert!((p_min(&post) - 0.5).abs() < 0.01);
    }

    #[test]
    fn summary_agrees_with_dense_posterior() {
        let mut rng = Rng::new(4);
        let (obs, p) = random_instance(&mut rng, 9);
        let dense = posterior(&obs, &p, 25).unwrap().summary();
        let fast = posterior_summary(&obs, &p, 25).unwrap();
        for i in 0..25 {
            assert!((dense.mean[i] - fast.mean[i]).abs() < 1e-12);
            assert!((dense.var[i] - fast.var[i]).abs() < 1e-12);
            assert!((dense.cov_last[i] - fast.cov_last[i]).abs() < 1e-12);
        }
        assert_eq!(dense.p_min(), fast.p_min());
    }

    fn summary_with(mean: Vec<f64>, var: f64) -> PosteriorSummary {
        let n = mean.len();
        PosteriorSummary {
            grid: uniform_grid(n),
            mean,
            var: vec![var; n],
            cov_last: vec![0.0; n],
        }
    }

    #[test]
    fn p_min_degenerate_cases() {
        let inc = summary_with((0..10).map(|i| i as f64).collect(), 1e-14);
        assert_eq!(inc.p_min(), 1.0);
        let dec = summary_with((0..10).map(|i| -(i as f64)).collect(), 1e-14);
        assert_eq!(dec.p_min(), 0.0);
    }

    #[test]
    fn argmin_rules() {
        let flat = summary_with(vec![2.0; 7], 1.0);
        assert_eq!(flat.argmin_mean(), 0.0);
        let dec = summary_with((0..7).map(|i| -(i as f64)).collect(), 1.0);
        assert_eq!(dec.argmin_mean(), 1.0);
    }

    #[test]
    fn argmin_of_v_shaped_data() {
        let xs = uniform_grid(201);
        let ys: Vec<f64> = xs.iter().map(|x| (x - 0.5f64).abs()).collect();
        let obs = NormalizedObservations::new(xs, ys).unwrap();
        let p = GpParams::new(0.25, 0.3, 0.01);
        let post = posterior_summary(&obs, &p, 101).unwrap();
        assert!((post.argmin_mean() - 0.5).abs() <= 0.01 + 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn lml_gradient_random(seed in any::<u64>(), n in 1usize..=10) {
            let mut rng = Rng::new(seed);
            let (obs, p) = random_instance(&mut rng, n);
            prop_assert!(check_gradient(&obs, &p).is_ok(), "{:?}", check_gradient(&obs, &p));
        }

        #[test]
        fn posterior_variance_below_prior(seed in any::<u64>(), n in 1usize..=10) {
            let mut rng = Rng::new(seed);
            let (obs, p) = random_instance(&mut rng, n);
            let post = posterior(&obs, &p, 20).unwrap();
            let sf2 = p.signal_std().powi(2);
            for i in 0..20 {
                prop_assert!(post.cov[(i, i)] <= sf2 + 1e-8);
                prop_assert!(post.cov[(i, i)] >= 0.0);
            }
            post.cov.check_symmetric().unwrap();
        }

        #[test]
        fn p_min_translation_invariant(seed in any::<u64>(), n in 2usize..=10, shift in -50.0f64..50.0) {
            let mut rng = Rng::new(seed);
            let (obs, p) = random_instance(&mut rng, n);
            let shifted = NormalizedObservations::new(
                obs.xs().to_vec(),
                obs.ys().iter().map(|y| y + shift).collect(),
            ).unwrap();
            let ps = GpParams { mean: p.mean + shift, ..p };
            let a = posterior_summary(&obs, &p, 30).unwrap().p_min();
            let b = posterior_summary(&shifted, &ps, 30).unwrap().p_min();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
