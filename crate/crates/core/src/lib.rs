pub mod bench;
pub mod error;
pub mod gp;
pub mod hypernet;
pub mod kernels;
pub mod linalg;
pub mod neighbors;
pub mod timeseries;
pub mod trainer;

pub use error::{DgcnError, Result};
