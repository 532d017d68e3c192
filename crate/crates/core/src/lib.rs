//! Simulation and rate-analysis toolkit for engineered dissipation in
//! superconducting circuits.
//!
//! The crate is organised bottom-up:
//!
//! * [`hilbert`]: operators on composite truncated Hilbert spaces.
//! * [`dynamics`]: Lindblad evolution and steady states.
//! * [`trajectories`]: quantum-jump unraveling and low-frequency noise.
//! * [`ratchet`]: golden-rule rates and shadow-element elimination.
//! * [`models`]: ready-made circuits (three-level refill, bit-flip ring,
//!   VSLQ, cat codes).
//! * [`analysis`]: decay fits, fidelities, QEC-condition reports.
//!
//! Units are dimensionless with ħ = 1; every model declares its own energy
//! reference.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod models;
pub mod ratchet;
pub mod trajectories;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
