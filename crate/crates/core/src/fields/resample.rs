//! Resolution changes between full-resolution planes and coarser layers.
//!
//! Two coordinate conventions are in use. Feature layers are *strided*: cell
//! `j` of a layer with stride `s` sits at full-resolution position `j * s`.
//! The image/latent pair is *center aligned*: latent cell `j` covers image
//! pixels `j*f .. j*f + f - 1`, so image position `p` maps to latent
//! position `(p + 0.5) / f - 0.5`.

use alloc::vec;
use alloc::vec::Vec;

use crate::fields::sample::bilinear_tap;
use crate::geometry::Vec2;

pub fn strided_dims(height: usize, width: usize, stride: usize) -> (usize, usize) {
    (height.div_ceil(stride), width.div_ceil(stride))
}

/// Keeps every `stride`-th cell in both directions.
pub fn decimate(src: &[f64], height: usize, width: usize, stride: usize) -> Vec<f64> {
    let (hd, wd) = strided_dims(height, width, stride);
    let mut out = Vec::with_capacity(hd * wd);
    for j in 0..hd {
        for i in 0..wd {
            out.push(src[j * stride * width + i * stride]);
        }
    }
    out
}

pub fn decimate_adjoint(src: &[f64], height: usize, width: usize, stride: usize) -> Vec<f64> {
    let (hd, wd) = strided_dims(height, width, stride);
    let mut out = vec![0.0; height * width];
    for j in 0..hd {
        for i in 0..wd {
            out[j * stride * width + i * stride] = src[j * wd + i];
        }
    }
    out
}

/// Bilinear upsampling of a strided layer back to `height × width`.
pub fn upsample_strided(
    src: &[f64],
    src_height: usize,
    src_width: usize,
    stride: usize,
    height: usize,
    width: usize,
) -> Vec<f64> {
    if stride == 1 && src_height == height && src_width == width {
        return src.to_vec();
    }
    let inv = 1.0 / stride as f64;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let p = Vec2::new(x as f64 * inv, y as f64 * inv);
            let tap = bilinear_tap(src_height, src_width, p).expect("finite grid position");
            out.push(tap.apply(src));
        }
    }
    out
}

pub fn upsample_strided_adjoint(
    src: &[f64],
    src_height: usize,
    src_width: usize,
    stride: usize,
    height: usize,
    width: usize,
) -> Vec<f64> {
    if stride == 1 && src_height == height && src_width == width {
        return src.to_vec();
    }
    let inv = 1.0 / stride as f64;
    let mut out = vec![0.0; src_height * src_width];
    for y in 0..height {
        for x in 0..width {
            let p = Vec2::new(x as f64 * inv, y as f64 * inv);
            let tap = bilinear_tap(src_height, src_width, p).expect("finite grid position");
            tap.scatter(&mut out, src[y * width + x]);
        }
    }
    out
}

/// Mean over non-overlapping `factor × factor` blocks.
pub fn box_downsample(src: &[f64], height: usize, width: usize, factor: usize) -> Vec<f64> {
    let (hl, wl) = (height / factor, width / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; hl * wl];
    for y in 0..hl * factor {
        for x in 0..wl * factor {
            out[(y / factor) * wl + x / factor] += src[y * width + x] * norm;
        }
    }
    out
}

/// Center-aligned bilinear upsampling by an integer factor.
pub fn upsample_centered(src: &[f64], height: usize, width: usize, factor: usize) -> Vec<f64> {
    let (ho, wo) = (height * factor, width * factor);
    let mut out = Vec::with_capacity(ho * wo);
    for y in 0..ho {
        for x in 0..wo {
            let p = image_to_latent(Vec2::new(x as f64, y as f64), factor);
            let tap = bilinear_tap(height, width, p).expect("finite grid position");
            out.push(tap.apply(src));
        }
    }
    out
}

pub fn image_to_latent(p: Vec2, factor: usize) -> Vec2 {
    let f = factor as f64;
    Vec2::new((p.x + 0.5) / f - 0.5, (p.y + 0.5) / f - 0.5)
}

pub fn latent_to_image(p: Vec2, factor: usize) -> Vec2 {
    let f = factor as f64;
    Vec2::new((p.x + 0.5) * f - 0.5, (p.y + 0.5) * f - 0.5)
}
