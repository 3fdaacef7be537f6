pub mod attention;
pub mod bias;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Category, Error, Result};
