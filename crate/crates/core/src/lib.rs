//! Blended shared control for a simulated differential-drive robot: world
//! model, kinematics, local costmap, DWA agent, arbitration, disturbances,
//! scripted operators, statistics and the batch experiment harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blend;
pub mod costmap;
pub mod delay;
pub mod dwa;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod grid;
pub mod kinematics;
pub mod metrics;
pub mod operator;
pub mod replay;
pub mod sim;
pub mod stats;
pub mod world;

pub use geometry::{normalize_angle, Pose2D, Twist2D};
