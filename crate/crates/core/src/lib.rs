//! Fast ring-array ultrasound computed tomography by parallel transmission
//! and learned signal separation.
//!
//! The pipeline has three stages:
//!
//! 1. [`simulator`] fires groups of transmitters at once on a density map
//!    built by [`phantom`] and records one [`RfFrame`] per group;
//! 2. [`separation`] splits each mixed frame into one frame per transmitter
//!    with a convolutional encoder-decoder trained from scratch;
//! 3. [`beamform`] reconstructs a synthetic-aperture image which
//!    [`quality`] log-compresses and scores.
//!
//! [`harness`] wires the stages into experiments, persistence and the CLI.

pub mod beamform;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod phantom;
pub mod preprocess;
pub mod quality;
pub mod separation;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{build_ring_array, make_firing_plan, FiringPlan, Point2, RingArrayGeometry};
pub use phantom::{GridSpec, IntensityImage, MediumMap};
pub use simulator::{Pulse, RfFrame, SimConfig};
