use alloc::format;
use alloc::vec::Vec;

use crate::diffusion::{run_ddim, NoiseSchedule, ToyDenoiser};
use crate::error::{Error, Result};
use crate::fields::resample::{
    box_downsample, image_to_latent, latent_to_image, upsample_centered,
};
use crate::fields::LatentField;
use crate::geometry::{Drag, PointPair, Vec2};
use crate::lwf::{compute_displacement_field, warp_latent, DisplacementField, LwfParams};
use crate::readout::ReadoutHead;
use crate::softmask::{generate_latent_mask, generate_soft_mask, SoftMask};

use super::config::DragConfig;
use super::schedule::{aldd_schedule, Action};
use super::session::EditSession;

/// Latent channels produced by the toy encoder.
pub const LATENT_CHANNELS: usize = 4;

/// Planar RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must not be empty"));
        }
        if data.len() != 3 * width * height {
            return Err(Error::shape(
                format!("{} samples", 3 * width * height),
                format!("{}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image samples must be finite"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let plane = width * height;
        let mut data = alloc::vec![0.0; 3 * plane];
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..3 {
                    data[c * plane + y * width + x] = px[c];
                }
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width * height {
            return Err(Error::shape(
                format!("{} bytes", 3 * width * height),
                format!("{}", bytes.len()),
            ));
        }
        Ok(Self::from_fn(width, height, |x, y| {
            let i = 3 * (y * width + x);
            [
                bytes[i] as f64 / 255.0,
                bytes[i + 1] as f64 / 255.0,
                bytes[i + 2] as f64 / 255.0,
            ]
        }))
    }

    /// Interleaved 8-bit samples, rounded and clamped.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                let v = self.data[c * plane + i].clamp(0.0, 1.0);
                out.push(crate::math::round(v * 255.0) as u8);
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.plane(c)[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean_abs_diff(&self, other: &RgbImage) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::shape(
                format!("{}x{} image", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.data.len() as f64)
    }
}

/// Box-mean encoder: channels 0..3 hold `2·rgb − 1`, channel 3 their mean.
pub fn encode_image(image: &RgbImage, factor: usize) -> Result<LatentField> {
    let (h, w) = (image.height, image.width);
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!(
            "{w}x{h} image is not divisible by the latent factor {factor}"
        )));
    }
    let (lh, lw) = (h / factor, w / factor);
    let mut values = Vec::with_capacity(LATENT_CHANNELS * lh * lw);
    for c in 0..3 {
        values.extend(
            box_downsample(image.plane(c), h, w, factor)
                .into_iter()
                .map(|v| 2.0 * v - 1.0),
        );
    }
    let n = lh * lw;
    for i in 0..n {
        values.push((values[i] + values[n + i] + values[2 * n + i]) / 3.0);
    }
    LatentField::new(LATENT_CHANNELS, lh, lw, values, 0)
}

/// Bilinear upsampling of channels 0..3, mapped back to `[0, 1]`.
pub fn decode_latent(latent: &LatentField, factor: usize) -> Result<RgbImage> {
    if latent.channels() < 3 {
        return Err(Error::invalid(
            "decoder needs at least three latent channels",
        ));
    }
    let (h, w) = (latent.height() * factor, latent.width() * factor);
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        data.extend(
            upsample_centered(latent.plane(c), latent.height(), latent.width(), factor)
                .into_iter()
                .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)),
        );
    }
    RgbImage::new(w, h, data)
}

/// Everything an edit needs besides its inputs.
#[derive(Debug, Clone)]
pub struct Backend {
    pub denoiser: ToyDenoiser,
    pub schedule: NoiseSchedule,
    pub latent_factor: usize,
}

impl Default for Backend {
    fn default() -> Self {
        Self {
            denoiser: ToyDenoiser::default(),
            schedule: NoiseSchedule::cosine(50).expect("50-step cosine schedule is valid"),
            latent_factor: 8,
        }
    }
}

/// Losses and handle positions after one drag step; handles in image pixels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub iteration: usize,
    pub timestep: usize,
    pub drag_loss: f64,
    pub motion_loss: f64,
    pub guidance_loss: f64,
    pub total_loss: f64,
    pub handles: Vec<Vec2>,
}

/// Summary of an edit. Positions are in image pixels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditReport {
    pub initial_handles: Vec<Vec2>,
    pub targets: Vec<Vec2>,
    pub final_handles: Vec<Vec2>,
    pub mean_distance: f64,
    pub converged: bool,
    pub drag_timestep: usize,
    pub drag_iterations: usize,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct EditOutput {
    pub image: RgbImage,
    pub report: EditReport,
    /// Soft mask at image resolution, for display.
    pub mask: SoftMask,
    /// Soft mask at latent resolution, as used by the optimizer.
    pub latent_mask: SoftMask,
    pub displacement: DisplacementField,
    /// Latent right after the warp, at the drag timestep.
    pub warped_latent: LatentField,
    /// Latent at the end of the drag loop, before the final denoise.
    pub dragged_latent: LatentField,
}

/// Mean Euclidean distance between paired points.
pub fn mean_distance(handles: &[Vec2], targets: &[Vec2]) -> Result<f64> {
    if handles.is_empty() {
        return Err(Error::invalid("mean distance of an empty point list"));
    }
    if handles.len() != targets.len() {
        return Err(Error::shape(
            format!("{} targets", handles.len()),
            format!("{}", targets.len()),
        ));
    }
    let total: f64 = handles
        .iter()
        .zip(targets)
        .map(|(h, t)| (*t - *h).norm())
        .sum();
    Ok(total / handles.len() as f64)
}

/// Encode, invert, mask, warp, drag, denoise, decode.
pub fn run_drag_edit(
    image: &RgbImage,
    pairs: &[PointPair],
    config: &DragConfig,
    head: &ReadoutHead,
    backend: &Backend,
) -> Result<EditOutput> {
    run_drag_edit_observed(image, pairs, config, head, backend, &mut |_| {})
}

/// [`run_drag_edit`], calling `observe` after every drag step.
pub fn run_drag_edit_observed(
    image: &RgbImage,
    pairs: &[PointPair],
    config: &DragConfig,
    head: &ReadoutHead,
    backend: &Backend,
    observe: &mut dyn FnMut(&IterationRecord),
) -> Result<EditOutput> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("at least one point pair is required"));
    }
    let (h, w) = (image.height, image.width);
    if let Some(p) = pairs.iter().find(|p| !p.inside(h, w)) {
        return Err(Error::invalid(format!(
            "pair ({}, {}) -> ({}, {}) outside {w}x{h} image",
            p.handle.x, p.handle.y, p.target.x, p.target.y
        )));
    }
    let factor = backend.latent_factor;
    let z0 = encode_image(image, factor)?;
    let t = backend
        .schedule
        .timestep_at_fraction(config.timestep_fraction);
    if config.aldd_denoise_steps > t {
        return Err(Error::Configuration(format!(
            "aldd_denoise_steps = {} exceeds the drag timestep {t}",
            config.aldd_denoise_steps
        )));
    }
    let zt = run_ddim(&z0, t, &backend.denoiser, &backend.schedule)?;

    let mask = generate_soft_mask(pairs, (h, w), config.mask_sigma)?;
    let latent_mask = generate_latent_mask(pairs, (h, w), factor, config.mask_sigma)?;
    let drags: Vec<Drag> = pairs
        .iter()
        .map(|p| {
            Drag::new(
                image_to_latent(p.handle.to_vec2(), factor),
                image_to_latent(p.target.to_vec2(), factor),
            )
        })
        .collect();
    let lwf = LwfParams {
        rho: config.rho,
        ..LwfParams::default()
    };
    let displacement = compute_displacement_field(&latent_mask, &drags, &lwf)?;
    let warped = warp_latent(&zt, &displacement)?;

    let mut session = EditSession::new(
        warped.clone(),
        latent_mask.clone(),
        &drags,
        *config,
        head,
        &backend.denoiser,
        &backend.schedule,
    )?;
    let to_image = |ps: &[Vec2]| {
        ps.iter()
            .map(|&p| latent_to_image(p, factor))
            .collect::<Vec<_>>()
    };
    let mut records = Vec::new();
    for action in aldd_schedule(config.aldd_denoise_steps, config.drag_steps_per_denoise) {
        match action {
            Action::Drag => {
                if session.iteration() >= config.max_drag_iterations {
                    continue;
                }
                if let Some(obj) = session.drag_step()? {
                    let record = IterationRecord {
                        iteration: session.iteration(),
                        timestep: session.timestep(),
                        drag_loss: obj.drag,
                        motion_loss: obj.motion,
                        guidance_loss: obj.guidance,
                        total_loss: obj.total,
                        handles: to_image(session.track().current()),
                    };
                    observe(&record);
                    records.push(record);
                }
            }
            Action::Denoise => session.denoise_step()?,
        }
    }

    let track = session.track().clone();
    let drag_iterations = session.iteration();
    let dragged_latent = session.into_current();
    let clean = run_ddim(&dragged_latent, 0, &backend.denoiser, &backend.schedule)?;
    let edited = decode_latent(&clean, factor)?;

    let final_handles = to_image(track.current());
    let targets: Vec<Vec2> = pairs.iter().map(|p| p.target.to_vec2()).collect();
    let report = EditReport {
        initial_handles: pairs.iter().map(|p| p.handle.to_vec2()).collect(),
        mean_distance: mean_distance(&final_handles, &targets)?,
        final_handles,
        targets,
        converged: track.all_converged(),
        drag_timestep: t,
        drag_iterations,
        iterations: records,
    };
    Ok(EditOutput {
        image: edited,
        report,
        mask,
        latent_mask,
        displacement,
        warped_latent: warped,
        dragged_latent,
    })
}

/// Flat background with one Gaussian blob of the given color.
pub fn blob_scene(
    width: usize,
    height: usize,
    center: Vec2,
    radius: f64,
    color: [f64; 3],
    background: [f64; 3],
) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - center.x, y as f64 - center.y);
        let d2 = dx * dx + dy * dy;
        let a = crate::math::exp(-d2 / (2.0 * radius * radius));
        core::array::from_fn(|c| background[c] + a * (color[c] - background[c]))
    })
}
