//! Smoothed softmax-tower hard instances for highly smooth convex
//! optimization, their Monte Carlo oracles, and the experiments that measure
//! how much each oracle query reveals.

pub mod error;
pub mod hard_instance;
pub mod instance;
pub mod experiments;
pub mod optimizers;
pub mod rng;
pub mod smoothing;
pub mod softmax;
pub mod stats;

pub use error::{ClbError, Result};
pub use rng::StreamId;
