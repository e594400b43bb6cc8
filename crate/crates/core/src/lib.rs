//! Regulator-equation solver and tracking-controller design for square
//! linear MIMO plants.

pub mod analysis;
pub mod canonical;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod json;
pub mod linalg;
pub mod model;
pub mod regulator;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result, Warning};
pub use model::{Exosystem, LinearSystem};
