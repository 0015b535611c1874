//! Mapless navigation learning: a batched 2D lidar simulator, a shaped-reward
//! goal-reaching environment, a small convolutional actor-critic and a GA3C
//! style parallel trainer, plus point-cloud/laser fusion.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acnet;
pub mod config;
pub mod fusion;
pub mod ga3c;
pub mod geometry;
pub mod sim_env;
pub mod worldmap;

pub use acnet::{NetOutput, NetParams, NetShape};
pub use config::RunConfig;
pub use geometry::{cast_scan, cast_scan_scalar, Obstacle, Pose, Scan, Scanner, ScannerSpec, Vec2};
pub use sim_env::{EnvSpec, Environment, EpisodeStatus, Observation};
pub use worldmap::WorldMap;
