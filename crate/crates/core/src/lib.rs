pub mod amputation;
pub mod autoencoder;
pub mod baseline;
pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod forest;
pub mod imputation;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod pain;
pub mod registry;
pub mod seed;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
