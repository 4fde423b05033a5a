pub mod error;
pub mod evolution;
pub mod experiment;
pub mod geometry;
pub mod damping;
pub mod dynamics;
pub mod fields;
pub mod potentials;
pub mod quasimodes;

pub use error::{Error, Result};
