pub mod disc;
pub mod cli;
pub mod error;
pub mod grad;
pub mod hippo;
pub mod kernel;
pub mod layer;
pub mod linalg;
pub mod rng;
pub mod special;
pub mod tasks;

pub use error::{LsslError, Result};
