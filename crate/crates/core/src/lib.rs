//! Audio-visual affordance grounding.
//!
//! Given one image and one audio clip, the model predicts two pixel masks:
//! the *function* region an action acts on and the *dependency* region that
//! supports it. The pipeline is an audio front end, a multi-scale visual
//! encoder, a semantic-conditioned cross-modal mixer and a dual-head
//! decoder, trained with IoU/Dice/Focal objectives.

pub mod data;
pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod audio;
pub mod mixer;
pub mod visual;
pub mod decoder;
pub mod objectives;
pub mod metrics;
pub mod model;
pub mod train;
