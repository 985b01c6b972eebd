//! Risk-gated multi-agent highway simulation with an exact discrete
//! free-energy toolkit.

pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fep;
pub mod gatekeeper;
pub mod geometry;
pub mod reward;
pub mod world;

pub use error::{Error, Result};
