//! Dense real-valued grids and the linear operators every other module is
//! built from: bilinear sampling, separable Gaussian blur, decimation and
//! upsampling, each with its adjoint so gradients can flow back exactly.

mod blur;
mod grid;
pub mod resample;
mod sample;

pub use blur::{gaussian_blur, gaussian_kernel, normalize_max, Blur};
pub use grid::{FeatureField, FieldShape, LatentField, ScalarGrid2D};
pub use sample::{bilinear_tap, BilinearTap};
