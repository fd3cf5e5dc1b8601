//! CAN-bus intrusion detection toolkit: trace IO, payload signal
//! classification, attack injection, and per-ID LSTM-autoencoder anomaly
//! detection with evaluation utilities.
//!
//! The numeric pipeline is generic over the scalar type via [`scalar::Scalar`]
//! (implemented for `f32` and `f64`); the default pipeline runs in `f32`.

pub mod attack;
pub mod detector;
pub mod evalbench;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod signals;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;
