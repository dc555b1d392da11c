use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::grid::{LatentField, ScalarGrid2D};
use crate::math;

/// 1-D Gaussian kernel truncated at radius `ceil(3 sigma)` and renormalized
/// to sum 1. `sigma == 0` gives the single tap `[1.0]`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("blur sigma must be finite and non-negative"));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let radius = math::ceil(3.0 * sigma) as usize;
    let denom = 2.0 * sigma * sigma;
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            math::exp(-d * d / denom)
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    Ok(kernel)
}

/// Separable Gaussian blur with edge replication, as a reusable linear
/// operator on row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Blur {
    kernel: Vec<f64>,
}

impl Blur {
    pub fn new(sigma: f64) -> Result<Self> {
        Ok(Self {
            kernel: gaussian_kernel(sigma)?,
        })
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn radius(&self) -> usize {
        self.kernel.len() / 2
    }

    pub fn is_identity(&self) -> bool {
        self.kernel.len() == 1
    }

    /// Weight of a cell on itself for an interior cell.
    pub fn center_weight_2d(&self) -> f64 {
        let c = self.kernel[self.radius()];
        c * c
    }

    pub fn apply(&self, src: &[f64], height: usize, width: usize) -> Vec<f64> {
        if self.is_identity() {
            return src.to_vec();
        }
        let r = self.radius() as isize;
        let mut tmp = vec![0.0; src.len()];
        for y in 0..height {
            let row = &src[y * width..(y + 1) * width];
            for x in 0..width {
                let mut acc = 0.0;
                for (k, w) in self.kernel.iter().enumerate() {
                    let sx = (x as isize + k as isize - r).clamp(0, width as isize - 1) as usize;
                    acc += w * row[sx];
                }
                tmp[y * width + x] = acc;
            }
        }
        let mut out = vec![0.0; src.len()];
        for y in 0..height {
            for (k, w) in self.kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - r).clamp(0, height as isize - 1) as usize;
                let src_row = &tmp[sy * width..(sy + 1) * width];
                let dst_row = &mut out[y * width..(y + 1) * width];
                for (d, s) in dst_row.iter_mut().zip(src_row) {
                    *d += w * s;
                }
            }
        }
        out
    }

    /// Transpose of [`Blur::apply`]. Differs from `apply` only near borders,
    /// where edge replication makes the operator non-symmetric.
    pub fn apply_adjoint(&self, src: &[f64], height: usize, width: usize) -> Vec<f64> {
        if self.is_identity() {
            return src.to_vec();
        }
        let r = self.radius() as isize;
        let mut tmp = vec![0.0; src.len()];
        for y in 0..height {
            for (k, w) in self.kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - r).clamp(0, height as isize - 1) as usize;
                for x in 0..width {
                    tmp[sy * width + x] += w * src[y * width + x];
                }
            }
        }
        let mut out = vec![0.0; src.len()];
        for y in 0..height {
            for x in 0..width {
                let g = tmp[y * width + x];
                for (k, w) in self.kernel.iter().enumerate() {
                    let sx = (x as isize + k as isize - r).clamp(0, width as isize - 1) as usize;
                    out[y * width + sx] += w * g;
                }
            }
        }
        out
    }

    pub fn apply_latent(&self, field: &LatentField) -> LatentField {
        let mut out = field.clone();
        for c in 0..field.channels() {
            let blurred = self.apply(field.plane(c), field.height(), field.width());
            out.plane_mut(c).copy_from_slice(&blurred);
        }
        out
    }

    pub fn apply_latent_adjoint(&self, field: &LatentField) -> LatentField {
        let mut out = field.clone();
        for c in 0..field.channels() {
            let blurred = self.apply_adjoint(field.plane(c), field.height(), field.width());
            out.plane_mut(c).copy_from_slice(&blurred);
        }
        out
    }
}

pub fn gaussian_blur(grid: &ScalarGrid2D, sigma: f64) -> Result<ScalarGrid2D> {
    let blur = Blur::new(sigma)?;
    let (h, w) = grid.dims();
    ScalarGrid2D::new(h, w, blur.apply(grid.values(), h, w))
}

/// Divides every value by the grid maximum so the result peaks at exactly 1.
pub fn normalize_max(grid: &ScalarGrid2D) -> Result<ScalarGrid2D> {
    let max = grid.max();
    if !(max > 0.0) {
        return Err(Error::DegenerateMask);
    }
    if grid.values().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("normalize_max expects non-negative values"));
    }
    let mut out = grid.clone();
    if max != 1.0 {
        out.values_mut().iter_mut().for_each(|v| *v /= max);
    }
    Ok(out)
}
