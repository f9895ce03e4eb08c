//! Phase-error sensitivity of multi-phase injection-locked ring oscillators.
//!
//! * [`lock`] solves the phasor steady state and locking range.
//! * [`sensitivity`] maps injection phase errors to output phase errors.
//! * [`sim`] is a behavioral time-domain model used as an independent check.
//! * [`montecarlo`] studies random stage mismatch against injection strength.
//! * [`experiments`] drives the sweeps behind the `ilro` command.

pub mod config;
pub mod error;
pub mod experiments;
pub mod lock;
pub mod montecarlo;
pub mod phasor;
pub mod roots;
pub mod sensitivity;
pub mod sim;

pub use config::{OscillatorConfig, StageModel};
pub use error::{Error, Result};
pub use lock::{LockState, OperatingPoint};
pub use phasor::{wrap_angle, Phasor};
