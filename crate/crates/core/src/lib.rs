//! Simulation and estimation toolkit for groups of moving carriers fitted with
//! spherical-coverage staring sensors.
//!
//! The crate synthesizes bearings-only observations, jointly classifies the
//! observed object and reconstructs its trajectory with a bank of
//! hypothesis-conditioned sigma-point filters, fuses observations across a
//! simulated network, and searches system configurations with differential
//! evolution.

pub mod filter;
pub mod fusion;
pub mod geodesy;
pub mod harness;
pub mod optimizer;
pub mod scene;
pub mod sensor;

pub use filter::{EstimateSet, EstimationGrid, Hypothesis, HypothesisBank, SoftConstraint};
pub use geodesy::{EcefVector, EllipsoidModel, Environment, GeodeticCoord};
pub use scene::{KinematicState, MotionModel, ObjectClassCatalog, Trajectory};
pub use sensor::{Measurement, ObservationSet, SensorArray};
