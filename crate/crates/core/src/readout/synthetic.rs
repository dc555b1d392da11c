use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{extract_features, ToyDenoiser};
use crate::error::{Error, Result};
use crate::fields::{Blur, FieldShape, LatentField};
use crate::math;

use super::triplet::TripletBatch;

/// Parameters of the synthetic triplet generator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticTripletConfig {
    pub count: usize,
    pub shape: FieldShape,
    /// Timestep the features are labelled with.
    pub timestep: usize,
    /// Blur applied to white noise to make the anchors.
    pub smoothness: f64,
}

impl Default for SyntheticTripletConfig {
    fn default() -> Self {
        Self {
            count: 50,
            shape: FieldShape::new(4, 8, 8),
            timestep: 35,
            smoothness: 1.0,
        }
    }
}

/// Smooth random latent with unit variance per channel.
fn smooth_latent<R: Rng + ?Sized>(shape: FieldShape, blur: &Blur, rng: &mut R) -> LatentField {
    let mut z = LatentField::from_fn(shape, 0, |_, _, _| rng.sample::<f64, _>(StandardNormal));
    for c in 0..shape.channels {
        let smoothed = blur.apply(z.plane(c), shape.height, shape.width);
        let n = smoothed.len() as f64;
        let mean = smoothed.iter().sum::<f64>() / n;
        let var = smoothed
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let inv = if var > 0.0 {
            1.0 / math::sqrt(var)
        } else {
            1.0
        };
        for (dst, v) in z.plane_mut(c).iter_mut().zip(smoothed) {
            *dst = (v - mean) * inv;
        }
    }
    z
}

/// Shift content by `(dx, dy)` cells, replicating the border.
fn translate(z: &LatentField, dx: i64, dy: i64) -> LatentField {
    let (h, w) = (z.height() as i64, z.width() as i64);
    LatentField::from_fn(z.shape(), z.timestep(), |c, x, y| {
        let sx = (x as i64 - dx).clamp(0, w - 1) as usize;
        let sy = (y as i64 - dy).clamp(0, h - 1) as usize;
        z.get(c, sx, sy)
    })
}

/// Per-channel `a·z + b` with at least two channels sign-flipped.
fn recolor<R: Rng + ?Sized>(z: &LatentField, rng: &mut R) -> LatentField {
    let channels = z.channels();
    let mut flips: Vec<bool> = (0..channels).map(|_| rng.random_bool(0.5)).collect();
    let mut order: Vec<usize> = (0..channels).collect();
    for i in (1..channels).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for &c in order.iter().take(2.min(channels)) {
        flips[c] = true;
    }
    let gains: Vec<f64> = flips
        .iter()
        .map(|f| {
            let g = rng.random_range(0.5..1.5);
            if *f {
                -g
            } else {
                g
            }
        })
        .collect();
    let offsets: Vec<f64> = (0..channels).map(|_| rng.random_range(-0.5..0.5)).collect();
    LatentField::from_fn(z.shape(), z.timestep(), |c, x, y| {
        gains[c] * z.get(c, x, y) + offsets[c]
    })
}

/// Triplets that reward appearance: the positive is the anchor moved by one
/// cell, the negative keeps the anchor's layout but remaps its channels.
pub fn synthetic_triplets<R: Rng + ?Sized>(
    config: &SyntheticTripletConfig,
    denoiser: &ToyDenoiser,
    rng: &mut R,
) -> Result<Vec<TripletBatch>> {
    if config.count == 0 || config.shape.is_empty() {
        return Err(Error::invalid("synthetic triplet set must be non-empty"));
    }
    let blur = Blur::new(config.smoothness)?;
    const SHIFTS: [(i64, i64); 8] = [
        (-1, -1),
        (0, -1),
        (1, -1),
        (-1, 0),
        (1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
    ];
    (0..config.count)
        .map(|_| {
            let anchor = smooth_latent(config.shape, &blur, rng).with_timestep(config.timestep);
            let (dx, dy) = SHIFTS[rng.random_range(0..SHIFTS.len())];
            let positive = translate(&anchor, dx, dy);
            let negative = recolor(&anchor, rng);
            TripletBatch::new(
                extract_features(&anchor, denoiser),
                extract_features(&positive, denoiser),
                extract_features(&negative, denoiser),
                config.timestep,
            )
        })
        .collect()
}
