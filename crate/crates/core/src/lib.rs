//! Portfolio management over customizable stock pools with soft actor-critic
//! and maskable stock representations.

pub mod agent;
pub mod env;
pub mod error;
pub mod evaluator;
pub mod marketdata;
pub mod nn;
pub mod representation;
pub mod steering;
pub mod trainer;

pub use error::{Error, Result};
