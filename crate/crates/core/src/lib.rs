//! Pool-based active learning for object detection with a noisy annotation
//! oracle and a budgeted label-error review step.
//!
//! Each cycle predicts on all images, queries and labels new images from the
//! pool, reviews the labeled set for missed boxes and wrong classes, and
//! evaluates mean average precision on a clean test split. Predictions come
//! from a parametric surrogate detector or from a predictions file.

pub mod datamodel;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod query;
pub mod review;
pub mod seeding;

pub use error::{Error, Result};
