pub mod autodiff;
pub mod error;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
