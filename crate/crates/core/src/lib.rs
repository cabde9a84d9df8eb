//! Keyframe-driven trajectory planning for camera quadrotors.
//!
//! Timed keyframes (position, camera yaw and pitch) are turned into a joint
//! quadrotor + gimbal trajectory by one sparse convex QP solve. On top of the
//! planner, [`time_opt`] moves keyframe times to make motion globally smooth,
//! and [`analysis`] provides jerk metrics plus a look-at orientation baseline.

pub mod analysis;
pub mod cli;
pub mod dynamics;
mod error;
pub mod keyframes;
pub mod planner;
pub mod qp;
pub mod scene;
pub mod time_opt;
pub mod traj_io;

pub use dynamics::{GimbalParams, Grid, QuadrotorParams};
pub use error::{Error, Result};
pub use keyframes::{Keyframe, KeyframeList};
pub use planner::{plan_trajectory, PlanningContext, Trajectory};
pub use qp::{SolveReport, SolveSettings, SolveStatus, Weights};
