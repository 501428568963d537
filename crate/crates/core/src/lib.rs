//! Free-space measurement-device-independent QKD simulator.
//!
//! Modules follow the physical chain: turbulent [`channel`], sensorless
//! [`adaptive_optics`], clock [`sync`], two-pulse interference ([`hom`]),
//! the finite-key [`decoy`] engine and its [`optimizer`], slot-level
//! [`postselect`]ion, and the [`cli`] orchestrator.

pub mod adaptive_optics;
pub mod channel;
pub mod cli;
pub mod decoy;
pub mod hom;
pub mod optimizer;
pub mod postselect;
pub mod error;
pub mod seed;
pub mod sync;

pub use error::{Error, Result};
