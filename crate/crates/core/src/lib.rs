//! Decoy-state BB84 with weak coherent pulses.
//!
//! The crate is split the same way the protocol is run:
//!
//! * [`models`] holds the closed-form physics: Poisson photon statistics, fiber
//!   transmittance, per-photon-number yields and the expected gain/QBER of an
//!   honest channel.
//! * [`simulation`] runs a Monte Carlo session pulse by pulse, including a
//!   photon-number-splitting adversary, and tallies sifted statistics per
//!   intensity class.
//! * [`analysis`] turns those tallies into vacuum and weak-decoy estimates,
//!   single-photon bounds, GLLP key rates and an eavesdropping verdict.

pub mod analysis;
pub mod error;
pub mod models;
pub mod simulation;

pub use error::{Error, Result};
