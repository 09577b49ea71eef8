pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod task;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use task::TaskKind;
