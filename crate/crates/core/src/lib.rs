pub mod binarized;
pub mod cli;
pub mod data;
pub mod error;
pub mod export;
pub mod ops;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod search;
pub mod supernet;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
