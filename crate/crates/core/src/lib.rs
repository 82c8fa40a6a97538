//! Gender profiling from a user's posted images and tweets.
//!
//! Item-level image and text classifiers produce per-item probabilities;
//! stacking combiners and a small late-fusion network turn the ten image and
//! ten tweet-chunk vectors of a user into one verdict.

pub mod corpus;
pub mod evaluation;
pub mod image_model;
pub mod labels;
pub mod micronet;
pub mod numeric;
pub mod stacking;
pub mod text_model;

pub use labels::{GenderLabel, ImageClass};
