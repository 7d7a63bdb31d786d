//! Bag-of-visual-words image classification with spatial tilings.
//!
//! The pipeline: dense upright SIFT descriptors on a regular grid, a k-means
//! visual vocabulary, per-region word histograms under a spatial tiling
//! (global, 2x2 rectangular, log-polar or concentric circular), and a
//! one-vs-all RBF SVM trained by SMO with cross-validated hyperparameters.
//! The `experiment` module wires these into a reproducible accuracy sweep
//! over vocabulary sizes and feature budgets.

pub mod dataset;
pub mod dsift;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod seeding;
pub mod svm;
pub mod synth;
pub mod tiling;
pub mod vocab;

pub use dataset::{scan_dataset_dir, DatasetManifest, ManifestEntry};
pub use error::{Error, Result};
pub use image::{load_grayscale, rotate_about_center, GrayImage};
