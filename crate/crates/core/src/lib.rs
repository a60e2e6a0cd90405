pub mod error;
pub mod curation;
pub mod envs;
pub mod harness;
pub mod numcore;
pub mod pipeline;
pub mod sac;
pub mod teacher;

pub use error::{CovrError, Result};
