//! Closed-loop multi-agent driver modeling for highway traffic.
//!
//! The crate bundles everything needed to train and evaluate learned traffic
//! agents against each other and against a rule-based baseline:
//!
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` tensors.
//! - [`geometry`]: frame transforms, the differentiable kinematic update,
//!   time-to-collision and oriented-box intersection.
//! - [`scene`]: agents, maps, rollouts, CSV ingestion, synthetic highway
//!   scenario generation and dataset splitting.
//! - [`policy`]: the graph-network policy (encoder, message passing, heads).
//! - [`simulator`]: closed-loop rollouts with log-replayed background agents.
//! - [`losses`]: supervised, adversarial and collision training objectives.
//! - [`training`]: Adam, schedules and the per-method training loops.
//! - [`baseline`]: car-following with rule-based lane changes.
//! - [`metrics`]: collision/off-road rates, displacement error and
//!   distributional realism scores.

pub mod autodiff;
pub mod baseline;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod policy;
pub mod scene;
pub mod simulator;
pub mod training;
