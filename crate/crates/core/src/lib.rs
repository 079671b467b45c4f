//! Distributional planning networks.
//!
//! A convolutional encoder, a latent dynamics model and a gradient descent
//! planner over latent actions are trained variationally on random
//! interaction data. Distances in the learned embedding then serve as a
//! goal-reaching reward.

pub mod checkpoint;
pub mod config;
pub mod env;
mod error;
pub mod io;
pub mod metric;
pub mod model;
pub mod networks;
pub mod params;
pub mod planner;
pub mod rl;
pub mod training;

pub use error::{DpnError, Result};
