pub mod error;
pub mod estimation;
pub mod harness;
pub mod policy;
pub mod process;
pub mod reachability;
pub mod strategy;

pub use error::{Error, Result};
