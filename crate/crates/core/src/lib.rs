pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod memory_bank;
pub mod model;
pub mod probe;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use error::{CpcdError, Result};
