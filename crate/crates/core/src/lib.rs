//! Virtual optical form measurement with a learned inverse.
//!
//! The crate simulates a tilted-wave-interferometer-like instrument on a
//! pixel grid, generates difference topographies from Zernike modes, trains
//! a U-Net to map optical path length differences back to topography, and
//! corrects disturbed instruments by calibrating against known spheres
//! before the network sees the data.
//!
//! Module map:
//!
//! - [`zernike`]: Noll-indexed Zernike basis, synthesis, and fitting.
//! - [`optics`]: design topographies, the surrogate forward model, disturbances.
//! - [`calib`]: calibration from spherical caps and hybrid input construction.
//! - [`data`]: seeded datasets, splits, normalization, on-disk format.
//! - [`net`]: tensors, layers with exact gradients, the U-Net, Adam, training.
//! - [`evalrep`]: in-disc metrics, reports, heatmaps, learning curves.
//! - [`cli`]: command-line experiments, the end-to-end pipeline, run manifests.

pub mod calib;
pub mod cli;
pub mod data;
pub mod error;
pub mod evalrep;
pub mod grid;
pub mod io;
mod linalg;
pub mod net;
pub mod optics;
pub mod zernike;

pub use error::{Error, Result};
pub use grid::{PixelMask, SurfaceGrid};
pub use optics::{Design, Disturbance, ForwardConfig, OplField};
