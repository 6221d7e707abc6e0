pub mod augment;
pub mod eqlv2;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod multiscale;
pub mod network_sim;
pub mod postprocess;

pub use error::{Error, Result};
