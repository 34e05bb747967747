//! Fixation-type prediction (FFPE vs. frozen section) from whole-slide thumbnails.

pub mod backbone;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod training;
pub mod weights;

pub use error::{Error, Result};
