//! Macrospin simulation of spin-torque nano-oscillators used as magnetic
//! nanoparticle sensors, from magnetization dynamics through multiplexed
//! spectral readout.
//!
//! All quantities are SI: fields and magnetizations in A/m, lengths in
//! meters, energies in joules, currents in amperes.

pub mod array;
pub mod bead;
pub mod dsp;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod mtj;
pub mod units;

pub use error::{Error, Result};
pub use units::Vec3;
