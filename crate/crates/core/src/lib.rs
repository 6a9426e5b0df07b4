//! Coronary stenosis grading from curved MPR images.

pub mod attribution;
pub mod error;
pub mod eval;
pub mod labels;
pub mod model;
pub mod preprocess;
pub mod report;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
