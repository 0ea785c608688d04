pub mod affinity;
pub mod dataspace;
pub mod error;
pub mod gradient;
pub mod hierarchy;
pub mod knn;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
