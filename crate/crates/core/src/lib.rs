pub mod dynamics;
pub mod energy;
pub mod error;
pub mod field;
pub mod geometry;
pub mod green;
pub mod interp;
pub mod solver;
pub mod spectral;
pub mod stability;

pub use error::{Error, Result};

/// Library version recorded in run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
