//! Simulator for a gigahertz-clocked B92 quantum key distribution link over
//! short-wavelength fibre.
//!
//! The link is modelled twice: [`protocol::run_link`] is an event-level Monte
//! Carlo of photons, detector clicks and gating, and [`analytics`] is a
//! closed-form model of the same link used as an oracle and for fast sweeps.
//! [`postproc`] turns sifted keys into final keys and [`harness`] drives
//! configuration, parameter sweeps and calibration.

// `!(x > y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod config;
pub mod detector;
pub mod error;
pub mod harness;
pub mod photonics;
pub mod postproc;
pub mod protocol;
pub mod rng;

pub use config::{LinkConfig, SimConfig};
pub use error::{Error, Result};
pub use photonics::ChannelMode;
pub use protocol::{run_link, RunOptions, RunSummary};
