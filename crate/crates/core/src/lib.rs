//! Data-driven symbolic abstractions of black-box interconnected networks.
//!
//! The crate builds finite symbolic models of unknown subsystems from one-step
//! simulation data, certifies them with alternating sub-bisimulation functions
//! found by a scenario linear program, combines the per-subsystem certificates
//! through a topology-free compositional condition, and synthesizes safety
//! controllers that are refined back to the original network.

pub mod abstraction;
pub mod blackbox;
pub mod certificate;
pub mod composition;
pub mod error;
pub mod gridding;
pub mod lipschitz;
pub mod pipeline;
pub mod sampling;
pub mod synthesis;

pub use error::{Error, Result};
