//! Covariate-shift tooling: raster corruptions and the synthetic 1-D data of
//! the illustrative examples.

mod image;
mod sine;

pub use image::{corrupt, corrupt_batch, severity_to_corruption, Corruption, CorruptionKind, RasterImage};
pub use sine::{make_sine_dataset, Amplitude, SineDataset, SineParams, DOMAIN};
