//! File formats, experiment configuration and the command implementations
//! for the recurrent state projection models in [`rsp_core`].

pub mod config;
pub mod dataset;
pub mod error;
pub mod gtck;
pub mod pgm;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
