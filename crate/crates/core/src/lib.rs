//! Reconstruction of 3D organ and tumor models from sparse stacks of
//! histological serial sections.
//!
//! The crate is organised as a pipeline:
//!
//! - [`stack_io`]: section stacks on disk, physical metadata, mask downscaling
//! - [`registration`]: NCC block matching, spring-mesh relaxation and
//!   piecewise-linear warping of every section into a common frame
//! - [`meshgen`]: watertight organ and tumor surfaces, geometry measurement,
//!   normalisation and tumor alignment
//! - [`features`]: patch tiling, texture / nuclei / intensity features,
//!   normalisation, percentile ranks and thresholding
//! - [`scene`]: tumor section patches, feature patch images, colormaps and
//!   the `bundle.json` manifest consumed by the viewer
//! - [`phantom`]: seeded synthetic stacks with ground truth for scoring
//! - [`pipeline`]: config-driven, resumable stage runner

pub mod error;
pub mod features;
pub mod geom;
pub mod meshgen;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod registration;
pub mod scene;
pub mod stack_io;

mod par;

pub use error::{Error, Result};
