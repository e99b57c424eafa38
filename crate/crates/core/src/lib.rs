//! Hyperspectral fruit-ripeness pipeline.
//!
//! Calibrates raw line-scan recordings into reflectance cubes, preprocesses
//! them (background removal, crop, resize, RGB/PCA reduction), classifies
//! ripeness/firmness/sweetness with a compact separable-convolution CNN and
//! classical baselines, explains predictions with integrated gradients, and
//! renders ripening false-color images via a two-stage pixel autoencoder.

pub mod attribution;
pub mod cube;
pub mod dataset;
pub mod envi;
pub mod error;
pub mod falsecolor;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod shallow;
pub mod synth;
pub mod train;

pub use cube::{average_references, calibrate, CameraProfile, HyperCube, RawFrame, WavelengthAxis};
pub use error::{Error, Result};
