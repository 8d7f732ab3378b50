//! Physics-based simulation of fluorescence microscopy images of
//! mitochondria with pixel-exact ground truth, plus baseline segmentation,
//! evaluation, tracking and morphology analytics.
//!
//! Pipeline: [`geometry`] tubes → [`photophysics`] emitters → [`optics`] PSF
//! → [`imaging`] render and noise → [`groundtruth`] masks, orchestrated by
//! [`dataset`]. The [`cli`] module backs the `mitosim` binary.

pub mod analytics;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod groundtruth;
pub mod imaging;
pub mod io;
pub mod optics;
pub mod photophysics;
pub mod raster;
pub mod rng;
pub mod segmentation;
pub mod tracking;

pub use config::Config;
pub use error::{Error, Result};
pub use raster::{FloatImage, Image, Mask, Raster};
