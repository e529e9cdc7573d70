pub mod atlas;
pub mod autodiff;
pub mod fields;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod trainer;
mod error;

pub use error::{Error, Result};
