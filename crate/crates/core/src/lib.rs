//! Optimal combination of image denoisers.
//!
//! Given K denoised estimates of the same image, the library estimates the
//! K x K error covariance matrix between them, solves for the convex
//! combination weights minimizing the combined MSE, and reports closed-form
//! bounds and diagnostics. It also provides a handful of classical denoisers,
//! booster recursions, and Monte-Carlo divergence-based MSE estimation so the
//! whole pipeline runs without ground truth.

pub mod config;
pub mod covariance;
pub mod denoise;
pub mod error;
pub mod mse;
pub mod image;
pub mod linalg;
pub mod pgm;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
