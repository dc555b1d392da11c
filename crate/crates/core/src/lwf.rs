//! Latent warpage: masked latent cells are pulled along an inverse-distance
//! weighted blend of attenuated drag vectors, giving the optimizer a
//! geometry-aware head start.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::{bilinear_tap, LatentField};
use crate::geometry::{Drag, PointPair, Vec2};
use crate::softmask::SoftMask;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LwfParams {
    /// Fraction of each drag vector applied by the warp.
    pub rho: f64,
    /// Added to distances before taking reciprocals.
    pub weight_epsilon: f64,
    /// Cells with mask value at or above this participate in the warp.
    pub mask_threshold: f64,
}

impl Default for LwfParams {
    fn default() -> Self {
        Self {
            rho: 0.15,
            weight_epsilon: 1e-6,
            mask_threshold: 0.5,
        }
    }
}

impl LwfParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.weight_epsilon > 0.0) || !self.weight_epsilon.is_finite() {
            return Err(Error::invalid("weight epsilon must be positive"));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold <= 1.0) {
            return Err(Error::invalid("mask threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Per-cell warp vectors; cells outside the support carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    vectors: Vec<Vec2>,
    support: Vec<bool>,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            vectors: vec![Vec2::ZERO; height * width],
            support: vec![false; height * width],
        }
    }

    /// Same vector on every cell, all cells supported.
    pub fn uniform(height: usize, width: usize, v: Vec2) -> Self {
        Self {
            height,
            width,
            vectors: vec![v; height * width],
            support: vec![true; height * width],
        }
    }

    /// Rebuilds a field from row-major vectors and support flags.
    pub fn from_parts(
        height: usize,
        width: usize,
        vectors: Vec<Vec2>,
        support: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        if vectors.len() != n || support.len() != n {
            return Err(Error::shape(
                format!("{n} cells"),
                format!("{} vectors, {} flags", vectors.len(), support.len()),
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("displacement vectors must be finite"));
        }
        Ok(Self {
            height,
            width,
            vectors,
            support,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, x: usize, y: usize) -> Vec2 {
        self.vectors[y * self.width + x]
    }

    pub fn supported(&self, x: usize, y: usize) -> bool {
        self.support[y * self.width + x]
    }

    pub fn vectors(&self) -> &[Vec2] {
        &self.vectors
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// The same field with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.vectors.iter_mut().for_each(|v| *v = *v * factor);
        out
    }
}

/// `rho * (target - handle)` for every pair.
pub fn scale_drags(pairs: &[PointPair], rho: f64) -> Result<Vec<Vec2>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
    }
    Ok(pairs
        .iter()
        .map(|p| (p.target.to_vec2() - p.handle.to_vec2()) * rho)
        .collect())
}

/// Normalized reciprocal-distance weights of `pixel` to every handle.
pub fn inverse_distance_weights(pixel: Vec2, handles: &[Vec2], epsilon: f64) -> Result<Vec<f64>> {
    if handles.is_empty() {
        return Err(Error::invalid(
            "inverse distance weights need at least one handle",
        ));
    }
    let mut w: Vec<f64> = handles
        .iter()
        .map(|&h| 1.0 / ((pixel - h).norm() + epsilon))
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Distance from `start` along `dir` to the last half-pixel step that is
/// still inside the image and has mask value `>= threshold`.
fn boundary_distance(start: Vec2, dir: Vec2, mask: &SoftMask, threshold: f64) -> f64 {
    let (h, w) = mask.dims();
    let max_steps = 2 * (h + w) + 4;
    let mut last = 0.0;
    for k in 1..=max_steps {
        let d = 0.5 * k as f64;
        match mask.nearest(start + dir * d) {
            Some(m) if m >= threshold => last = d,
            _ => break,
        }
    }
    last
}

/// Ratio of the distances to the support boundary, measured backwards along
/// the drag, from the pixel and from the handle; clamped to `[0, 1]`.
pub fn stretch_factor(
    pixel: Vec2,
    handle: Vec2,
    drag: Vec2,
    mask: &SoftMask,
    threshold: f64,
) -> f64 {
    if pixel == handle {
        return 1.0;
    }
    let Some(dir) = drag.normalized() else {
        return 1.0;
    };
    let back = -dir;
    let from_handle = boundary_distance(handle, back, mask, threshold);
    if from_handle == 0.0 {
        return 1.0;
    }
    let from_pixel = boundary_distance(pixel, back, mask, threshold);
    (from_pixel / from_handle).clamp(0.0, 1.0)
}

/// `v_j = sum_i w_ij * lambda_ij * rho * (target_i - handle_i)` over every
/// supported cell of `mask`.
pub fn compute_displacement_field(
    mask: &SoftMask,
    drags: &[Drag],
    params: &LwfParams,
) -> Result<DisplacementField> {
    params.validate()?;
    if drags.is_empty() {
        return Err(Error::invalid("displacement field needs at least one drag"));
    }
    let (h, w) = mask.dims();
    let handles: Vec<Vec2> = drags.iter().map(|d| d.handle).collect();
    let scaled: Vec<Vec2> = drags.iter().map(|d| d.vector() * params.rho).collect();
    let mut field = DisplacementField::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) < params.mask_threshold {
                continue;
            }
            let p = Vec2::new(x as f64, y as f64);
            let weights = inverse_distance_weights(p, &handles, params.weight_epsilon)?;
            let mut v = Vec2::ZERO;
            for ((&wi, &hi), &di) in weights.iter().zip(&handles).zip(&scaled) {
                let lambda = stretch_factor(p, hi, di, mask, params.mask_threshold);
                v = v + di * (wi * lambda);
            }
            let idx = y * w + x;
            field.vectors[idx] = v;
            field.support[idx] = true;
        }
    }
    Ok(field)
}

pub fn compute_displacement_field_for_pairs(
    mask: &SoftMask,
    pairs: &[PointPair],
    params: &LwfParams,
) -> Result<DisplacementField> {
    let drags: Vec<Drag> = pairs.iter().copied().map(Drag::from).collect();
    compute_displacement_field(mask, &drags, params)
}

/// Backward warp: `out(p) = in(p - v(p))`, bilinear, clamped to the grid.
/// Unsupported and zero-displacement cells are copied verbatim.
pub fn warp_latent(latent: &LatentField, field: &DisplacementField) -> Result<LatentField> {
    let (h, w) = (latent.height(), latent.width());
    if field.height != h || field.width != w {
        return Err(Error::shape(
            format!("{h}x{w} displacement field"),
            format!("{}x{}", field.height, field.width),
        ));
    }
    let mut out = latent.clone();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let v = field.vectors[idx];
            if !field.support[idx] || v == Vec2::ZERO {
                continue;
            }
            let src = Vec2::new(x as f64, y as f64) - v;
            let tap = bilinear_tap(h, w, src)?;
            for c in 0..latent.channels() {
                out.plane_mut(c)[idx] = tap.apply(latent.plane(c));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{FieldShape, ScalarGrid2D};
    use crate::geometry::Pixel;
    use crate::softmask::generate_soft_mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(x0: i64, y0: i64, x1: i64, y1: i64) -> PointPair {
        PointPair::new(Pixel::new(x0, y0), Pixel::new(x1, y1))
    }

    fn rect_mask(h: usize, w: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> SoftMask {
        let g = ScalarGrid2D::from_fn(h, w, |x, y| {
            if (x0..=x1).contains(&x) && (y0..=y1).contains(&y) {
                1.0
            } else {
                0.0
            }
        });
        SoftMask::from_grid(g, 0.0).unwrap()
    }

    #[test]
    fn drag_scaling() {
        assert_eq!(
            scale_drags(&[pair(2, 3, 10, 3)], 0.0).unwrap(),
            vec![Vec2::ZERO]
        );
        assert_eq!(
            scale_drags(&[pair(2, 3, 10, 3)], 1.0).unwrap(),
            vec![Vec2::new(8.0, 0.0)]
        );
        let d = scale_drags(&[pair(0, 0, 20, 0)], 0.15).unwrap()[0];
        assert!((d.x - 3.0).abs() < 1e-12 && d.y == 0.0);
        assert!(scale_drags(&[pair(0, 0, 1, 0)], 1.5).is_err());
    }

    #[test]
    fn weights_single_and_symmetric() {
        let p = Vec2::new(3.0, 4.0);
        assert_eq!(
            inverse_distance_weights(p, &[Vec2::ZERO], 1e-6).unwrap(),
            vec![1.0]
        );
        let w = inverse_distance_weights(
            Vec2::new(5.0, 2.0),
            &[Vec2::new(3.0, 2.0), Vec2::new(7.0, 2.0)],
            1e-6,
        )
        .unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_at_distances_one_and_three() {
        let eps = 1e-6;
        let w =
            inverse_distance_weights(Vec2::ZERO, &[Vec2::new(1.0, 0.0), Vec2::new(0.0, 3.0)], eps)
                .unwrap();
        let a = 1.0 / (1.0 + eps);
        let b = 1.0 / (3.0 + eps);
        assert!((w[0] - a / (a + b)).abs() < 1e-15);
        assert!((w[0] - 0.75).abs() < 1e-6 && (w[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn weights_always_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let n = rng.random_range(1..6);
            let handles: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)))
                .collect();
            let p = Vec2::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0));
            let w = inverse_distance_weights(p, &handles, 1e-6).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn stretch_on_rectangle() {
        let m = rect_mask(9, 32, 0, 20, 2, 6);
        let d = Vec2::new(1.0, 0.0);
        let handle = Vec2::new(10.0, 4.0);
        assert_eq!(stretch_factor(handle, handle, d, &m, 0.5), 1.0);
        assert_eq!(stretch_factor(Vec2::new(5.0, 4.0), handle, d, &m, 0.5), 0.5);
        assert_eq!(stretch_factor(Vec2::new(0.0, 4.0), handle, d, &m, 0.5), 0.0);
        // Ahead of the handle the ratio saturates.
        assert_eq!(
            stretch_factor(Vec2::new(15.0, 4.0), handle, d, &m, 0.5),
            1.0
        );
        assert_eq!(
            stretch_factor(Vec2::new(5.0, 4.0), handle, Vec2::ZERO, &m, 0.5),
            1.0
        );
    }

    #[test]
    fn zero_rho_gives_zero_field() {
        let m = generate_soft_mask(&[pair(4, 8, 12, 8)], (16, 16), 2.0).unwrap();
        let params = LwfParams {
            rho: 0.0,
            ..LwfParams::default()
        };
        let f = compute_displacement_field_for_pairs(&m, &[pair(4, 8, 12, 8)], &params).unwrap();
        assert_eq!(f.max_norm(), 0.0);
    }

    #[test]
    fn single_pair_at_handle_moves_by_scaled_drag() {
        let pairs = [pair(4, 8, 12, 8)];
        let m = generate_soft_mask(&pairs, (16, 16), 2.0).unwrap();
        let f = compute_displacement_field_for_pairs(&m, &pairs, &LwfParams::default()).unwrap();
        let v = f.get(4, 8);
        assert!((v.x - 0.15 * 8.0).abs() < 1e-12 && v.y == 0.0);
    }

    #[test]
    fn opposite_drags_cancel_on_bisector() {
        let pairs = [pair(6, 10, 2, 10), pair(14, 10, 18, 10)];
        let m = generate_soft_mask(&pairs, (21, 21), 3.0).unwrap();
        let params = LwfParams {
            rho: 1.0,
            mask_threshold: 0.05,
            ..LwfParams::default()
        };
        let f = compute_displacement_field_for_pairs(&m, &pairs, &params).unwrap();
        for y in 0..21 {
            if f.supported(10, y) {
                // Direct summation oracle.
                let p = Vec2::new(10.0, y as f64);
                let hs = [Vec2::new(6.0, 10.0), Vec2::new(14.0, 10.0)];
                let ds = [Vec2::new(-4.0, 0.0), Vec2::new(4.0, 0.0)];
                let w = inverse_distance_weights(p, &hs, 1e-6).unwrap();
                let mut v = Vec2::ZERO;
                for i in 0..2 {
                    v = v + ds[i] * (w[i] * stretch_factor(p, hs[i], ds[i], &m, 0.05));
                }
                assert!(v.norm() < 1e-12);
                assert!(f.get(10, y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn displacement_bounded_by_largest_scaled_drag() {
        let pairs = [pair(5, 5, 25, 9), pair(20, 25, 12, 20), pair(28, 4, 28, 12)];
        let m = generate_soft_mask(&pairs, (32, 32), 4.0).unwrap();
        let params = LwfParams {
            rho: 0.4,
            mask_threshold: 0.1,
            ..LwfParams::default()
        };
        let f = compute_displacement_field_for_pairs(&m, &pairs, &params).unwrap();
        let bound = pairs
            .iter()
            .map(|p| (p.target.to_vec2() - p.handle.to_vec2()).norm())
            .fold(0.0, f64::max)
            * 0.4;
        assert!(f.max_norm() <= bound + 1e-12);
    }

    #[test]
    fn translation_equivariance() {
        let base = [pair(10, 12, 16, 15)];
        let shifted = [pair(13, 14, 19, 17)];
        let m0 = generate_soft_mask(&base, (40, 40), 2.0).unwrap();
        let m1 = generate_soft_mask(&shifted, (40, 40), 2.0).unwrap();
        let params = LwfParams::default();
        let f0 = compute_displacement_field_for_pairs(&m0, &base, &params).unwrap();
        let f1 = compute_displacement_field_for_pairs(&m1, &shifted, &params).unwrap();
        for y in 0..30 {
            for x in 0..30 {
                assert_eq!(f0.supported(x, y), f1.supported(x + 3, y + 2));
                assert!((f0.get(x, y) - f1.get(x + 3, y + 2)).norm() < 1e-12);
            }
        }
    }

    fn random_latent(seed: u64, shape: FieldShape) -> LatentField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentField::from_fn(shape, 0, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_field_warp_is_bit_exact_identity() {
        let z = random_latent(1, FieldShape::new(4, 8, 8));
        let mut f = DisplacementField::uniform(8, 8, Vec2::ZERO);
        assert_eq!(warp_latent(&z, &f).unwrap(), z);
        f = DisplacementField::zeros(8, 8);
        assert_eq!(warp_latent(&z, &f).unwrap(), z);
    }

    #[test]
    fn unit_shift_moves_content_one_cell_right() {
        let z = random_latent(2, FieldShape::new(2, 6, 9));
        let f = DisplacementField::uniform(6, 9, Vec2::new(1.0, 0.0));
        let out = warp_latent(&z, &f).unwrap();
        for c in 0..2 {
            for y in 0..6 {
                for x in 1..9 {
                    assert_eq!(out.get(c, x, y), z.get(c, x - 1, y));
                }
            }
        }
    }

    #[test]
    fn half_cell_shift_averages_horizontal_neighbors() {
        let z = LatentField::from_fn(FieldShape::new(1, 6, 6), 0, |_, x, y| ((x + y) % 2) as f64);
        let f = DisplacementField::uniform(6, 6, Vec2::new(0.5, 0.0));
        let out = warp_latent(&z, &f).unwrap();
        for y in 0..6 {
            for x in 1..6 {
                let want = 0.5 * (z.get(0, x - 1, y) + z.get(0, x, y));
                assert!((out.get(0, x, y) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let z = random_latent(3, FieldShape::new(1, 4, 4));
        let f = DisplacementField::zeros(5, 4);
        assert!(matches!(
            warp_latent(&z, &f),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
