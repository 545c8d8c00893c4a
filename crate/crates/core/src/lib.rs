//! Mask-based music source separation with multi-domain and combination
//! losses and an optional bridged ("crossing") network wiring.

pub mod data;
pub mod dsp;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
