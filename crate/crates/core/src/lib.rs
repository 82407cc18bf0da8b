//! Unsupervised lung-field segmentation and anatomically constrained
//! synthetic opacity generation for chest radiographs.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`], [`components`], [`blur`], [`rng`], [`io`]: grayscale fields,
//!   masks, labeling, filtering and deterministic randomness.
//! - [`pbtseg`]: progressive multi-threshold lung segmentation.
//! - [`brush`] and [`transforms`]: painting and reshaping an additive opacity
//!   layer inside the lungs.
//! - [`synth`]: triplet generation; [`batch`] runs it over directories.
//! - [`losses`] and [`metrics`]: training objectives and evaluation scores as
//!   plain numeric functions.
//! - [`config`] and [`dataio`]: configuration files, input scanning, manifests.
//! - [`phantom`]: procedural two-lung test images with known ground truth.

pub mod batch;
pub mod blur;
pub mod brush;
pub mod components;
pub mod config;
pub mod dataio;
pub mod error;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pbtseg;
pub mod phantom;
pub mod rng;
pub mod synth;
pub mod transforms;

pub use crate::blur::gaussian_blur;
pub use crate::components::{connected_components, label_components, Connectivity, Labeling, Region};
pub use crate::error::{Error, Result};
pub use crate::image::{normalize, percentile, threshold_below, BinaryMask, GrayImage};
pub use crate::rng::RandomStream;
