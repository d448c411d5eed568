//! Hybrid extended bicycle model (kinematic single-track model with learned
//! slip angles), an MPPI planner built on it, and the 9-DoF four-wheel
//! simulator used both as training-data source and as closed-loop plant.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod csvutil;
pub mod bench;
pub mod bicycle;
pub mod config;
pub mod datagen;
pub mod lowctl;
pub mod mppi;
pub mod refsim;
pub mod slipnet;
pub mod vehicle;

pub use vehicle::{
    body_to_world, nearest_path_point, world_to_body, wrap_to_pi, BicycleControl, BicycleState, PacejkaCoeffs,
    PathRef, PathSample, VehicleParams,
};
