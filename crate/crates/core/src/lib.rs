//! Closed-loop simulation laboratory for an adaptive robotic fish leader.
//!
//! The crate couples a robot controller that adapts its approach behavior to
//! observed avoidance reactions with simulated fish, a trial and experiment
//! harness, the behavioral metrics used to score leadership, and the
//! statistics that compare treatment arms.
//!
//! Module map:
//!
//! * [`geometry`] and [`params`]: shared value types and the canonical parameter set.
//! * [`metrics`]: approach distance, avoidance/follow scores, follow episodes, trial summaries.
//! * [`controller`]: milling/approach/lead state machine and the four treatment modes.
//! * [`kinematics`]: turn-then-drive robot plant and the point integrator used by fish.
//! * [`fish`]: stochastic guppy, scripted and replay fish.
//! * [`sim`] and [`record`]: trial loop, pretrials, experiments and on-disk records.
//! * [`stats`] and [`analysis`]: hypothesis tests, regressions and report emission.
//! * [`bridge`]: the controller served over newline-delimited JSON on TCP.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bridge;
pub mod controller;
pub mod error;
pub mod fish;
pub mod geometry;
pub mod kinematics;
pub mod metrics;
pub mod params;
pub mod record;
pub mod rng;
pub mod sim;
pub mod stats;

pub use controller::{CarefulnessLaw, ControllerConfig, ControllerState, ModeKind, MotionCommand, Observation, Phase};
pub use error::{Error, Result};
pub use geometry::{Pose, Vec2};
pub use params::{ArenaSpec, ControllerParams, FollowParams, Params, ReferenceDistribution, TimeBase};
pub use record::{TrialManifest, TrialRecord, TrialRow};
pub use sim::{ExperimentDataset, ExperimentId, TrialConfig};

/// Version string stamped into manifests.
pub const ARTIFACT_VERSION: &str = concat!("leadsim ", env!("CARGO_PKG_VERSION"));
