pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod policy;
pub mod qfcn;
pub mod reward;
pub mod sensing;
pub mod trainer;
pub mod world;

pub use config::TrainConfig;
pub use error::{Error, Result};
