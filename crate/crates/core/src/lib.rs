pub mod cache;
pub mod checkpoint;
pub mod clm;
pub mod config;
pub mod dataio;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod prompting;
pub mod report;
pub mod revin;
pub mod sca;
pub mod student;
pub mod synth;
pub mod teacher;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
