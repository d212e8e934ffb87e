//! SGD, Adam, AdamP and LAMB as step functions over a [`ParamGroup`].
//!
//! Weight decay is decoupled everywhere: `w ← w − lr·λ·w` is applied before
//! the gradient-driven update (LAMB folds it into its update direction).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("shape mismatch: parameters have {params} entries, gradient has {grad}")]
    ShapeMismatch { params: usize, grad: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamP,
    Lamb,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
            Self::AdamP => "adamp",
            Self::Lamb => "lamb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// AdamP projection threshold; the projection engages when
    /// `|cos(w, g)| < delta / sqrt(dim)`.
    pub delta: f64,
    /// SGD momentum.
    pub momentum: f64,
    /// Upper clip on LAMB's trust ratio.
    pub max_trust_ratio: f64,
}

impl OptimizerConfig {
    pub fn sgd(momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            delta: 0.1,
            momentum,
            max_trust_ratio: 10.0,
        }
    }

    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(0.0)
        }
    }

    /// AdamP with weight decay 0.1, β = (0.9, 0.999), ε = 1e-8, δ = 0.1.
    pub fn adamp() -> Self {
        Self {
            kind: OptimizerKind::AdamP,
            weight_decay: 0.1,
            ..Self::adam()
        }
    }

    /// LAMB with weight decay 0.1, β = (0.9, 0.999), ε = 1e-6.
    pub fn lamb() -> Self {
        Self {
            kind: OptimizerKind::Lamb,
            eps: 1e-6,
            weight_decay: 0.1,
            ..Self::adam()
        }
    }

    /// Defaults for `kind`.
    pub fn for_kind(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(0.0),
            OptimizerKind::Adam => Self::adam(),
            OptimizerKind::AdamP => Self::adamp(),
            OptimizerKind::Lamb => Self::lamb(),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adamp()
    }
}

/// One tensor's parameters and optimizer moments.
///
/// For SGD, `m` holds the momentum buffer and `v` is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub values: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub layer_id: String,
}

impl ParamGroup {
    pub fn new(layer_id: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step_count: 0,
            layer_id: layer_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_shape(group: &ParamGroup, grad: &[f64]) -> Result<(), OptimError> {
    if group.values.len() != grad.len() {
        return Err(OptimError::ShapeMismatch {
            params: group.values.len(),
            grad: grad.len(),
        });
    }
    Ok(())
}

fn decay(values: &mut [f64], lr: f64, weight_decay: f64) {
    if weight_decay != 0.0 {
        let f = 1.0 - lr * weight_decay;
        values.iter_mut().for_each(|w| *w *= f);
    }
}

/// Advances the moments and returns the bias-corrected Adam direction
/// `m̂ / (√v̂ + ε)`.
fn adam_direction(group: &mut ParamGroup, grad: &[f64], cfg: &OptimizerConfig) -> Vec<f64> {
    group.step_count += 1;
    let t = group.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut dir = Vec::with_capacity(grad.len());
    for ((m, v), &g) in group.m.iter_mut().zip(group.v.iter_mut()).zip(grad) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        dir.push(m_hat / (v_hat.sqrt() + cfg.eps));
    }
    dir
}

pub fn sgd_step(
    group: &mut ParamGroup,
    grad: &[f64],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), OptimError> {
    check_shape(group, grad)?;
    decay(&mut group.values, lr, cfg.weight_decay);
    group.step_count += 1;
    for ((w, buf), &g) in group.values.iter_mut().zip(group.m.iter_mut()).zip(grad) {
        *buf = cfg.momentum * *buf + g;
        *w -= lr * *buf;
    }
    Ok(())
}

pub fn adam_step(
    group: &mut ParamGroup,
    grad: &[f64],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), OptimError> {
    check_shape(group, grad)?;
    let dir = adam_direction(group, grad, cfg);
    decay(&mut group.values, lr, cfg.weight_decay);
    for (w, d) in group.values.iter_mut().zip(dir) {
        *w -= lr * d;
    }
    Ok(())
}

/// Removes the component of `q` along `w`. Returns `q` unchanged when
/// `‖w‖ < 1e-12`.
pub fn project_tangent(q: &[f64], w: &[f64]) -> Vec<f64> {
    let wn = norm(w);
    if wn < 1e-12 {
        return q.to_vec();
    }
    let coef = dot(q, w) / (wn * wn);
    q.iter().zip(w).map(|(qi, wi)| qi - coef * wi).collect()
}

/// Whether AdamP's scale-invariance criterion holds for `(w, g)`.
pub fn adamp_projects(w: &[f64], grad: &[f64], delta: f64) -> bool {
    let (wn, gn) = (norm(w), norm(grad));
    if wn < 1e-12 || gn == 0.0 || w.is_empty() {
        return false;
    }
    let cos = dot(w, grad) / (wn * gn);
    cos.abs() < delta / (w.len() as f64).sqrt()
}

pub fn adamp_step(
    group: &mut ParamGroup,
    grad: &[f64],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), OptimError> {
    check_shape(group, grad)?;
    let project = adamp_projects(&group.values, grad, cfg.delta);
    let mut dir = adam_direction(group, grad, cfg);
    if project {
        dir = project_tangent(&dir, &group.values);
    }
    decay(&mut group.values, lr, cfg.weight_decay);
    for (w, d) in group.values.iter_mut().zip(dir) {
        *w -= lr * d;
    }
    Ok(())
}

/// LAMB trust ratio `‖w‖/‖r‖`, 1 when either norm vanishes, clipped to
/// `[0, max]`.
pub fn trust_ratio(w_norm: f64, r_norm: f64, max: f64) -> f64 {
    if w_norm == 0.0 || r_norm == 0.0 {
        1.0
    } else {
        (w_norm / r_norm).clamp(0.0, max)
    }
}

pub fn lamb_step(
    group: &mut ParamGroup,
    grad: &[f64],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), OptimError> {
    check_shape(group, grad)?;
    let mut r = adam_direction(group, grad, cfg);
    if cfg.weight_decay != 0.0 {
        for (ri, wi) in r.iter_mut().zip(&group.values) {
            *ri += cfg.weight_decay * wi;
        }
    }
    let phi = trust_ratio(norm(&group.values), norm(&r), cfg.max_trust_ratio);
    for (w, ri) in group.values.iter_mut().zip(r) {
        *w -= lr * phi * ri;
    }
    Ok(())
}

/// Dispatches on `cfg.kind`.
pub fn step(
    group: &mut ParamGroup,
    grad: &[f64],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), OptimError> {
    match cfg.kind {
        OptimizerKind::Sgd => sgd_step(group, grad, lr, cfg),
        OptimizerKind::Adam => adam_step(group, grad, lr, cfg),
        OptimizerKind::AdamP => adamp_step(group, grad, lr, cfg),
        OptimizerKind::Lamb => lamb_step(group, grad, lr, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay(mut cfg: OptimizerConfig) -> OptimizerConfig {
        cfg.weight_decay = 0.0;
        cfg
    }

    #[test]
    fn sgd_plain() {
        let mut g = ParamGroup::new("w", vec![1.0]);
        sgd_step(&mut g, &[0.5], 0.1, &OptimizerConfig::sgd(0.0)).unwrap();
        assert!((g.values[0] - 0.95).abs() < 1e-15);
        let before = g.values.clone();
        sgd_step(&mut g, &[0.0], 0.1, &OptimizerConfig::sgd(0.0)).unwrap();
        assert_eq!(g.values, before);
    }

    #[test]
    fn sgd_momentum_unrolled() {
        // buf₁ = 1, buf₂ = 0.9·1 + 1 = 1.9
        let cfg = OptimizerConfig::sgd(0.9);
        let mut g = ParamGroup::new("w", vec![0.0]);
        sgd_step(&mut g, &[1.0], 0.1, &cfg).unwrap();
        assert!((g.values[0] + 0.1).abs() < 1e-15);
        sgd_step(&mut g, &[1.0], 0.1, &cfg).unwrap();
        assert!((g.values[0] + 0.1 + 0.19).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut g = ParamGroup::new("w", vec![0.0; 3]);
        let cfg = OptimizerConfig::adam();
        assert_eq!(
            step(&mut g, &[1.0], 0.1, &cfg),
            Err(OptimError::ShapeMismatch { params: 3, grad: 1 })
        );
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = OptimizerConfig::adam();
        let grad = [3.0, -0.02, 1e-3];
        let mut g = ParamGroup::new("w", vec![0.0; 3]);
        adam_step(&mut g, &grad, 0.01, &cfg).unwrap();
        for (w, gi) in g.values.iter().zip(grad) {
            // m̂ = g, v̂ = g², so the step is lr·|g|/(|g| + ε)
            let expected = -0.01 * gi / (gi.abs() + cfg.eps);
            assert!((w - expected).abs() < 1e-15);
            assert!((w.abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let cfg = OptimizerConfig::adam();
        let mut g = ParamGroup::new("w", vec![0.3, -1.2]);
        for _ in 0..10 {
            adam_step(&mut g, &[0.0, 0.0], 0.1, &cfg).unwrap();
        }
        assert_eq!(g.values, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_scalar_quadratic() {
        let cfg = OptimizerConfig::adam();
        let mut g = ParamGroup::new("x", vec![1.0]);
        for _ in 0..100 {
            let x = g.values[0];
            adam_step(&mut g, &[2.0 * x], 0.01, &cfg).unwrap();
        }
        let x = g.values[0];
        assert!(x.abs() < 1.0);
        assert!(x * x < 1.0);
    }

    #[test]
    fn adam_degenerate_betas_match_recurrence() {
        // β1 = β2 = 0 and a huge ε: update ≈ lr·g/ε, a scaled SGD step.
        let cfg = OptimizerConfig {
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e6,
            ..OptimizerConfig::adam()
        };
        let mut g = ParamGroup::new("x", vec![1.0]);
        let mut x = 1.0f64;
        for _ in 0..5 {
            let grad = 2.0 * x;
            x -= 0.5 * grad / (grad.abs() + 1e6);
            let cur = g.values[0];
            adam_step(&mut g, &[2.0 * cur], 0.5, &cfg).unwrap();
        }
        assert!((g.values[0] - x).abs() < 1e-15);
    }

    #[test]
    fn adamp_radial_gradient_is_annihilated() {
        // A δ large enough to engage the projection even for cos = 1.
        let cfg = OptimizerConfig {
            delta: 10.0,
            weight_decay: 0.0,
            ..OptimizerConfig::adamp()
        };
        // unequal magnitudes so sign(g) keeps a tangent part after projection
        let w = vec![1.0, 2.0, -0.5, 0.3];
        let grad: Vec<f64> = w.iter().map(|x| 2.5 * x).collect();
        assert!(adamp_projects(&w, &grad, cfg.delta));
        let mut g = ParamGroup::new("w", w.clone());
        adamp_step(&mut g, &grad, 0.1, &cfg).unwrap();
        let update: Vec<f64> = g.values.iter().zip(&w).map(|(a, b)| a - b).collect();
        let radial = dot(&update, &w).abs();
        assert!(norm(&update) > 1e-3);
        assert!(radial <= 1e-10 * norm(&update) * norm(&w));
    }

    #[test]
    fn adamp_projection_removes_radial_part_of_direction() {
        // g ⊥ w but sign(g) is not, so the raw Adam direction has a radial part.
        let cfg = no_decay(OptimizerConfig::adamp());
        let w = vec![1.0, 2.0];
        let grad = vec![2.0, -1.0];
        assert!(adamp_projects(&w, &grad, cfg.delta));
        let mut g = ParamGroup::new("w", w.clone());
        adamp_step(&mut g, &grad, 0.1, &cfg).unwrap();
        let update: Vec<f64> = g.values.iter().zip(&w).map(|(a, b)| a - b).collect();
        assert!(dot(&update, &w).abs() <= 1e-10 * norm(&update) * norm(&w));
    }

    #[test]
    fn adamp_tangent_direction_equals_adam() {
        let cfg = no_decay(OptimizerConfig::adamp());
        let w = vec![1.0, 1.0, 0.0, 0.0];
        let grad = vec![1.0, -1.0, 0.5, -0.5];
        assert!(adamp_projects(&w, &grad, cfg.delta));
        let mut a = ParamGroup::new("w", w.clone());
        let mut b = ParamGroup::new("w", w);
        adamp_step(&mut a, &grad, 0.1, &cfg).unwrap();
        adam_step(&mut b, &grad, 0.1, &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn adamp_matches_adam_when_criterion_unmet() {
        let cfg = OptimizerConfig::adamp();
        let w = vec![0.8, -0.3, 1.1];
        let mut a = ParamGroup::new("w", w.clone());
        let mut b = ParamGroup::new("w", w);
        for k in 0..20 {
            // gradient stays close to w so |cos| ≥ δ/√3
            let grad: Vec<f64> = a.values.iter().map(|x| x + 0.01 * k as f64).collect();
            assert!(!adamp_projects(&a.values, &grad, cfg.delta));
            adamp_step(&mut a, &grad, 0.05, &cfg).unwrap();
            adam_step(&mut b, &grad, 0.05, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lamb_trust_ratio_one_matches_adam_direction() {
        let cfg = OptimizerConfig::lamb();
        let grad = [0.3, -0.4];
        // First step: r = sign(g)(1 − tiny) + λw; pick w with ‖w‖ = ‖r‖.
        let mut probe = ParamGroup::new("w", vec![0.0, 0.0]);
        let dir = adam_direction(&mut probe, &grad, &cfg);
        // w = c·dir gives r = (1 + λc)·dir, so ‖w‖ = ‖r‖ when c = 1/(1 − λ).
        let c = 1.0 / (1.0 - cfg.weight_decay);
        let w: Vec<f64> = dir.iter().map(|d| c * d).collect();
        let r: Vec<f64> = dir.iter().zip(&w).map(|(d, wi)| d + cfg.weight_decay * wi).collect();
        assert!((norm(&w) - norm(&r)).abs() < 1e-12);
        let mut g = ParamGroup::new("w", w.clone());
        lamb_step(&mut g, &grad, 0.01, &cfg).unwrap();
        for ((after, before), ri) in g.values.iter().zip(&w).zip(&r) {
            assert!((after - (before - 0.01 * ri)).abs() < 1e-14);
        }
    }

    #[test]
    fn lamb_zero_weights_use_unit_ratio() {
        let cfg = OptimizerConfig::lamb();
        let grad = [1.0, -2.0, 0.5];
        let mut g = ParamGroup::new("w", vec![0.0; 3]);
        let mut probe = g.clone();
        let r = adam_direction(&mut probe, &grad, &cfg);
        lamb_step(&mut g, &grad, 0.1, &cfg).unwrap();
        for (w, ri) in g.values.iter().zip(&r) {
            assert!((w + 0.1 * ri).abs() < 1e-15);
        }
    }

    #[test]
    fn lamb_update_scales_with_weight_norm() {
        let cfg = no_decay(OptimizerConfig::lamb());
        let grad = [0.2, 0.7, -0.1];
        let w = vec![0.3, -0.1, 0.2];
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let mut a = ParamGroup::new("w", w.clone());
        let mut b = ParamGroup::new("w", w2.clone());
        lamb_step(&mut a, &grad, 0.1, &cfg).unwrap();
        lamb_step(&mut b, &grad, 0.1, &cfg).unwrap();
        let da: Vec<f64> = a.values.iter().zip(&w).map(|(x, y)| x - y).collect();
        let db: Vec<f64> = b.values.iter().zip(&w2).map(|(x, y)| x - y).collect();
        assert!((norm(&db) - 2.0 * norm(&da)).abs() < 1e-12);
    }

    #[test]
    fn trust_ratio_is_clipped() {
        assert_eq!(trust_ratio(100.0, 1.0, 10.0), 10.0);
        assert_eq!(trust_ratio(0.0, 1.0, 10.0), 1.0);
        assert_eq!(trust_ratio(1.0, 0.0, 10.0), 1.0);
        assert_eq!(trust_ratio(1.0, 4.0, 10.0), 0.25);
    }

    #[test]
    fn all_optimizers_descend_quadratic() {
        for cfg in [
            OptimizerConfig::sgd(0.9),
            OptimizerConfig::adam(),
            no_decay(OptimizerConfig::adamp()),
            no_decay(OptimizerConfig::lamb()),
        ] {
            let mut g = ParamGroup::new("x", vec![1.0, 1.0]);
            let f = |x: &[f64]| 0.5 * dot(x, x);
            let start = f(&g.values);
            for _ in 0..200 {
                let grad = g.values.clone();
                step(&mut g, &grad, 0.01, &cfg).unwrap();
            }
            assert!(f(&g.values) < start, "{:?} did not descend", cfg.kind);
        }
    }

    #[test]
    fn steps_are_deterministic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::AdamP, OptimizerKind::Lamb] {
            let cfg = OptimizerConfig::for_kind(kind);
            let mut a = ParamGroup::new("w", vec![0.1, -0.7, 0.4]);
            let mut b = a.clone();
            for _ in 0..3 {
                step(&mut a, &[0.3, 0.2, -0.9], 0.05, &cfg).unwrap();
                step(&mut b, &[0.3, 0.2, -0.9], 0.05, &cfg).unwrap();
            }
            assert_eq!(a, b);
        }
    }
}
