//! Geometric adversarial masks for image classifiers.
//!
//! The crate generates Circle, Diamond, Square and Knit overlay masks,
//! composites them onto image corpora, scores perceptual quality, and turns
//! externally produced prediction files into accuracy, rank and confidence
//! degradation tables. It also runs the density/opacity grid search used to
//! pick mask parameters.

pub mod corpus;
pub mod eval;
pub mod error;
pub mod image;
pub mod jsonl;
pub mod maskgen;
pub mod metrics;
pub mod regression;
pub mod search;

pub use error::{Error, Result};
pub use image::RgbImage;
