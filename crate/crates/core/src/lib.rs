//! Hand/articulated-object interaction pipeline: synthetic manipulation data,
//! hierarchical discrete grasp tokens, a small manipulation language model over
//! those tokens, and evaluation metrics.

pub mod articulated_object;
pub mod discrete_repr;
pub mod error;
pub mod hand_model;
pub mod layers;
pub mod manip_lm;
pub mod metrics;
pub mod records;
pub mod rng;
pub mod synth_data;

pub use error::{HaoiError, Result};
