pub mod baselines;
pub mod calibrate;
pub mod engine;
pub mod error;
pub mod exec;
pub mod firegrid;
pub mod harness;
pub mod history;
pub mod model;
pub mod planner;
pub mod selfcheck;

pub use error::{Error, Result};
