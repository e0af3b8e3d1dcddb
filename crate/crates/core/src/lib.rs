pub mod autodiff;
pub mod config;
pub mod coupled;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod export;
pub mod kb;
pub mod model;
pub mod paths;
pub mod pca;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
