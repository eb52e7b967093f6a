//! Learning digital twin of a degrading eccentric rotor.

pub mod config;
pub mod detectors;
pub mod error;
pub mod format;
pub mod gp;
pub mod hybrid;
pub mod ldt;
pub mod report;
pub mod rotor_sim;
pub mod seed;
pub mod sysid;

pub use error::{LdtError, Result};
