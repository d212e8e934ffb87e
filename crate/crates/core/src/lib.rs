//! Automated warmup learning-rate scheduling.
//!
//! The learning rate grows exponentially from a tiny value until a
//! Gaussian-process test on the training-loss trajectory reports that the
//! loss has stopped decreasing; the schedule then switches to a predefined
//! decay that starts from the learning rate active at the estimated minimum.
//!
//! - [`numerics`]: dense matrices, Cholesky, the Gaussian CDF, a pinned RNG.
//! - [`gp`]: GP fitting, posterior prediction, `p_min` and the posterior argmin.
//! - [`detector`]: subsampled per-epoch tests with majority vote and patience.
//! - [`schedule`]: the two-phase scheduler plus the baseline schedules.
//! - [`optim`]: SGD, Adam, AdamP and LAMB.
//! - [`train`]: small synthetic classification runs that produce loss streams.
//! - [`synthgen`]: synthetic loss trajectories and a detector evaluation harness.

pub mod detector;
pub mod gp;
pub mod numerics;
pub mod optim;
pub mod schedule;
pub mod synthgen;
pub mod train;

/// Version string echoed into experiment metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
