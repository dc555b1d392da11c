//! Automatic soft masks: every handle→target path is rasterized, the rasters
//! are united, blurred and normalized to peak at 1.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::{gaussian_blur, normalize_max, ScalarGrid2D};
use crate::geometry::{Pixel, PointPair, Vec2};
use crate::math;

/// Cells visited by the straight path of one drag.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRaster {
    pub sample_count: usize,
    /// `k / (N - 1)` per sample; `[0.0]` for a zero-length drag.
    pub blend_weights: Vec<f64>,
    pub cells: Vec<Pixel>,
}

/// Normalized `[0, 1]` mask over the editable region.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    grid: ScalarGrid2D,
    sigma: f64,
}

impl SoftMask {
    /// Wraps an existing grid, checking the `[0, 1]` range and unit peak.
    pub fn from_grid(grid: ScalarGrid2D, sigma: f64) -> Result<Self> {
        if grid.values().iter().any(|v| !(0.0..=1.0).contains(v)) || grid.max() != 1.0 {
            return Err(Error::invalid(
                "soft mask values must lie in [0, 1] and peak at 1",
            ));
        }
        Ok(Self { grid, sigma })
    }

    /// A mask that is 1 everywhere.
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            grid: ScalarGrid2D::filled(height, width, 1.0),
            sigma: 0.0,
        }
    }

    pub fn grid(&self) -> &ScalarGrid2D {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.grid.get(x, y)
    }

    /// Mask value at the nearest cell to `p`, or `None` outside the grid.
    pub fn nearest(&self, p: Vec2) -> Option<f64> {
        let (h, w) = self.dims();
        let x = math::round(p.x);
        let y = math::round(p.y);
        if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
            return None;
        }
        Some(self.grid.get(x as usize, y as usize))
    }

    /// Values quantized for an 8-bit grayscale image, `round(255 * M)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.grid
            .values()
            .iter()
            .map(|v| math::round(255.0 * v) as u8)
            .collect()
    }
}

/// Rasterizes the straight path from handle to target with
/// `N = max(|dx|, |dy|) + 1` samples rounded to the nearest cell.
pub fn rasterize_drag_path(pair: &PointPair, dims: (usize, usize)) -> Result<PathRaster> {
    let (h, w) = dims;
    if !pair.handle.inside(h, w) {
        return Err(Error::invalid(format!(
            "handle ({}, {}) outside {}x{} image",
            pair.handle.x, pair.handle.y, w, h
        )));
    }
    if !pair.target.inside(h, w) {
        return Err(Error::invalid(format!(
            "target ({}, {}) outside {}x{} image",
            pair.target.x, pair.target.y, w, h
        )));
    }
    let (x0, y0) = (pair.handle.x, pair.handle.y);
    let (x1, y1) = (pair.target.x, pair.target.y);
    let span = (x1 - x0).abs().max((y1 - y0).abs());
    let sample_count = span as usize + 1;

    // round(((span - k) * a + k * b) / span) in exact integer arithmetic,
    // ties away from zero; coordinates are non-negative here.
    let lerp = |a: i64, b: i64, k: i64| {
        let num = (span - k) * a + k * b;
        (2 * num + span).div_euclid(2 * span)
    };
    let mut blend_weights = Vec::with_capacity(sample_count);
    let mut cells = Vec::with_capacity(sample_count);
    for k in 0..=span {
        if span == 0 {
            blend_weights.push(0.0);
            cells.push(pair.handle);
            break;
        }
        blend_weights.push(k as f64 / span as f64);
        cells.push(Pixel::new(lerp(x0, x1, k), lerp(y0, y1, k)));
    }
    Ok(PathRaster {
        sample_count,
        blend_weights,
        cells,
    })
}

/// Binary union of all path rasters.
pub fn accumulate_paths(pairs: &[PointPair], dims: (usize, usize)) -> Result<ScalarGrid2D> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let mut raw = ScalarGrid2D::zeros(h, w);
    for pair in pairs {
        for cell in rasterize_drag_path(pair, dims)?.cells {
            raw.set(cell.x as usize, cell.y as usize, 1.0);
        }
    }
    Ok(raw)
}

pub fn generate_soft_mask(
    pairs: &[PointPair],
    dims: (usize, usize),
    sigma: f64,
) -> Result<SoftMask> {
    if pairs.is_empty() {
        return Err(Error::invalid("soft mask needs at least one point pair"));
    }
    let raw = accumulate_paths(pairs, dims)?;
    let blurred = gaussian_blur(&raw, sigma)?;
    Ok(SoftMask {
        grid: normalize_max(&blurred)?,
        sigma,
    })
}

/// Mask for a latent grid `factor` times smaller than the image: the pairs
/// are mapped to latent cells and `sigma` is divided by `factor`.
pub fn generate_latent_mask(
    pairs: &[PointPair],
    image_dims: (usize, usize),
    factor: usize,
    sigma: f64,
) -> Result<SoftMask> {
    let (h, w) = image_dims;
    let latent_dims = (h / factor, w / factor);
    for p in pairs {
        if !p.inside(h, w) {
            return Err(Error::invalid(format!(
                "pair ({}, {}) -> ({}, {}) outside {}x{} image",
                p.handle.x, p.handle.y, p.target.x, p.target.y, w, h
            )));
        }
    }
    let to_latent = |px: Pixel| {
        let l = crate::fields::resample::image_to_latent(px.to_vec2(), factor);
        Pixel::new(
            (math::round(l.x).max(0.0) as i64).min(latent_dims.1 as i64 - 1),
            (math::round(l.y).max(0.0) as i64).min(latent_dims.0 as i64 - 1),
        )
    };
    let scaled: Vec<PointPair> = pairs
        .iter()
        .map(|p| PointPair::new(to_latent(p.handle), to_latent(p.target)))
        .collect();
    generate_soft_mask(&scaled, latent_dims, sigma / factor as f64)
}
