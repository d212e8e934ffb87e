use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianBlobs,
    TwoMoons,
    Spiral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub noise: f64,
    pub seed: u64,
    /// Held-out samples drawn from the same distribution.
    #[serde(default)]
    pub n_eval: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |reason: String| Err(TrainError::InvalidSpec(reason));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.n_classes > self.n_samples {
            return bad(format!(
                "n_classes ({}) exceeds n_samples ({})",
                self.n_classes, self.n_samples
            ));
        }
        if self.n_features == 0 {
            return bad("n_features must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        match self.kind {
            DatasetKind::TwoMoons if self.n_classes != 2 => {
                bad("two_moons has exactly 2 classes".into())
            }
            DatasetKind::TwoMoons | DatasetKind::Spiral if self.n_features < 2 => {
                bad(format!("{:?} needs at least 2 features", self.kind))
            }
            _ => Ok(()),
        }
    }
}

/// Features (one row per sample) and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    fn take(&self, range: std::ops::Range<usize>) -> Dataset {
        let d = self.n_features();
        let data = self.features.data()[range.start * d..range.end * d].to_vec();
        Dataset {
            features: Matrix::from_vec(range.len(), d, data).expect("row slice"),
            labels: self.labels[range].to_vec(),
            n_classes: self.n_classes,
        }
    }
}

/// Training split of `spec`.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset, TrainError> {
    Ok(make_split(spec)?.0)
}

/// Training and held-out splits; both come from one draw so they share
/// class geometry.
pub fn make_split(spec: &DatasetSpec) -> Result<(Dataset, Dataset), TrainError> {
    spec.validate()?;
    let total = spec.n_samples + spec.n_eval;
    let mut rng = Rng::new(spec.seed);
    let d = spec.n_features;
    let k = spec.n_classes;
    let labels: Vec<usize> = (0..total).map(|i| i % k).collect();
    let mut features = Matrix::zeros(total, d);

    match spec.kind {
        DatasetKind::GaussianBlobs => {
            let centers = Matrix::from_fn(k, d, |_, _| rng.uniform_range(-2.0, 2.0));
            for (i, &c) in labels.iter().enumerate() {
                for j in 0..d {
                    features[(i, j)] = centers[(c, j)] + spec.noise * rng.normal();
                }
            }
        }
        DatasetKind::TwoMoons => {
            for (i, &c) in labels.iter().enumerate() {
                let a = PI * rng.uniform();
                let (x, y) = if c == 0 {
                    (a.cos(), a.sin())
                } else {
                    (1.0 - a.cos(), 0.5 - a.sin())
                };
                features[(i, 0)] = x + spec.noise * rng.normal();
                features[(i, 1)] = y + spec.noise * rng.normal();
                for j in 2..d {
                    features[(i, j)] = spec.noise * rng.normal();
                }
            }
        }
        DatasetKind::Spiral => {
            for (i, &c) in labels.iter().enumerate() {
                let r = rng.uniform();
                let theta = 2.0 * PI * c as f64 / k as f64 + 4.0 * r;
                features[(i, 0)] = r * theta.cos() + spec.noise * rng.normal();
                features[(i, 1)] = r * theta.sin() + spec.noise * rng.normal();
                for j in 2..d {
                    features[(i, j)] = spec.noise * rng.normal();
                }
            }
        }
    }

    let all = Dataset {
        features,
        labels,
        n_classes: k,
    };
    Ok((all.take(0..spec.n_samples), all.take(spec.n_samples..total)))
}
