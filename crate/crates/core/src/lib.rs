//! Quality-diversity program and prompt search driven by language-model mutations.

pub mod archive;
pub mod candidate;
pub mod config;
pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod evolution;
pub mod gateway;
pub mod prompts;
pub mod proxy;
pub mod report;

pub use error::{Error, Result};
