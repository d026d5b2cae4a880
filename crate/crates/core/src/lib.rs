//! Time-varying phase and period correction gains for ensemble timing.
//!
//! The linear phase/period correction model for `K` performers, with gains
//! that follow random walks, is cast as a linear-Gaussian state-space model
//! and estimated with a Kalman filter and backward smoother.
//!
//! * [`kalman`]: generic filter, smoother and innovation log-likelihood.
//! * [`model`]: state layout, `F`/`G_n`/`V`/`W` construction, gain extraction.
//! * [`synth`]: generative simulator with scripted tempo conditions.
//! * [`oracle`]: exact joint-Gaussian conditioning for verification.
//! * [`recovery`]: simulate-then-smooth experiments over many seeds.
//! * [`io`]: CSV and config file formats.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod kalman;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod recovery;
pub mod synth;

pub use error::{Error, Result};
pub use kalman::{FilterStep, GaussianBelief, SmoothedStep, StepModel};
pub use model::{EnsembleConfig, GainTrajectory, IoiSeries, OnsetTimeline};
pub use parallel::Execution;
