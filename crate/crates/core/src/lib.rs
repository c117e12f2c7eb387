//! Pseudo-label refinement and source-free domain adaptation for binary
//! segmentation.
//!
//! Pseudo-labels come from Monte-Carlo dropout statistics of a small
//! convolutional network. Each pixel receives a Cantelli (one-sided
//! Chebyshev) lower bound on the probability that the network output lies
//! on the pseudo-label's side of the threshold. That bound drives pixel
//! masking, confidence-weighted class prototypes, and the per-image blend
//! between teacher and student supervision during self-training.
//!
//! The crate is organised bottom-up:
//!
//! - [`field`]: dense 2-D grids (probabilities, labels, masks, features, images)
//! - [`confidence`]: MC-dropout moments and the confidence bound
//! - [`denoise`]: direct and prototypical masking, baseline noise scores
//! - [`model`]: the toy segmentation network, its gradients, Adam, EMA, checkpoints
//! - [`adapt`]: source training and teacher-student adaptation
//! - [`synthdata`]: the synthetic shifted-domain benchmark
//! - [`metrics`]: Dice, ASD and noise-detection scores
//! - [`harness`]: experiment drivers shared by the CLI and the acceptance tests
//! - [`report`]: CSV and SVG emission

pub mod adapt;
pub mod confidence;
pub mod denoise;
mod error;
pub mod field;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod synthdata;

pub use error::{Error, Result};
