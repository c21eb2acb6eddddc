//! Monocular helicopter pose estimation and landing-area decision aid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod geometry;
pub mod model;
pub mod sim;
pub mod tracker;
pub mod wire;
pub mod yaw;
