//! PlugTrack: multi-object tracking with an adaptive blend of a Kalman
//! filter and a learned motion predictor.

pub mod abg;
pub mod assignment;
pub mod cme;
pub mod data;
pub mod error;
pub mod geometry;
pub mod kalman;
pub mod mcas;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod predictors;
pub mod tracking;
pub mod train;

pub use error::{Error, Result};
