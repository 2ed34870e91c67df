pub mod cli;
pub mod coldstart;
pub mod data;
pub mod error;
pub mod harness;
pub mod irt;
pub mod metrics;
pub mod nnkernel;
pub mod policy;
pub mod real17;

pub use error::{Error, Result};
