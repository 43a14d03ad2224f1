//! Calibration of time-series valued computer simulators.
//!
//! The crate fits an SVD-based Gaussian-process emulator to simulator runs,
//! chooses follow-up runs with a saddlepoint approximation of the expected
//! improvement in squared L2 discrepancy to a target series, and extracts
//! the input that minimizes the expected squared L2 discrepancy.
//!
//! Module map:
//!
//! - [`design`]: maximin Latin hypercubes and random candidate sets on `[0,1]^q`
//! - [`gp`]: anisotropic Gaussian kernel and MAP fitting of one coefficient process
//! - [`emulator`]: the SVD basis, coefficient GPs and the joint predictive law
//! - [`saei`]: discrepancy moments, CGF, saddlepoint EI, exact and Monte-Carlo EI
//! - [`inverse`]: the sequential calibration loop and solution extraction
//! - [`simulators`]: closed-form test simulators, targets, subprocess simulators

pub mod design;
pub mod emulator;
pub mod error;
pub mod gp;
pub mod inverse;
pub mod persist;
pub mod rng;
pub mod saei;
pub mod simulators;
pub mod special;

pub use design::{maximin_lhd, random_candidates, Design, UnitBox};
pub use emulator::{DesignSet, Prediction, SvdGpModel};
pub use error::{Error, Result};
pub use gp::{FittedCoefficientGp, KernelParams, PriorConfig};
pub use inverse::{CalibrationProblem, Extraction, RunTrace};
pub use saei::{CgfContext, SaddleSolution};
pub use simulators::{Simulator, SimulatorKind, SimulatorSpec, TargetSpec};
