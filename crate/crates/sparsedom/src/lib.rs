pub mod czo;
pub mod domination;
pub mod error;
pub mod grid;
pub mod harness;
pub mod orlicz;
pub mod report;
pub mod rng;
pub mod sparse;
pub mod weights;

pub use error::{Error, Result};
