pub mod audio;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod protocol;
pub mod replay;
pub mod rng;
pub mod scoring;

pub use error::{Error, Result};
