//! Identity disguising for EEG spectral-topography images.

pub mod classifier;
pub mod config;
pub mod dataset;
pub mod disguiser;
pub mod dummyid;
mod error;
pub mod evalreport;
pub mod nn;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod topomap;

pub use error::{Error, Result};
