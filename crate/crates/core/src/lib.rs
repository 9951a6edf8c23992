//! Battery capacity analysis from constant-current charging curves.

pub mod attribution;
pub mod correlation;
pub mod data;
pub mod error;
pub mod features;
pub mod fusion;
pub mod json;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod woa;

pub use error::{Error, Result};
