use alloc::vec::Vec;

use crate::diffusion::{
    ddim_step, extract_features, features_adjoint, Direction, NoiseSchedule, ToyDenoiser,
};
use crate::error::{Error, Result};
use crate::fields::{FeatureField, LatentField, ScalarGrid2D};
use crate::geometry::Drag;
use crate::readout::{reference_embedding, rg_loss, ReadoutHead};
use crate::softmask::SoftMask;

use super::config::DragConfig;
use super::losses::{drag_loss, motion_supervision_loss};
use super::tracking::{track_points, TrackState};

/// Loss terms at one latent and the gradient of their weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub drag: f64,
    pub motion: f64,
    pub guidance: f64,
    pub total: f64,
    pub gradient: LatentField,
}

/// `latent -= lr * mask * gradient`, skipping cells where the mask is zero.
/// The latent is untouched when the gradient is not finite.
pub fn apply_masked_update(
    latent: &mut LatentField,
    mask: &ScalarGrid2D,
    gradient: &LatentField,
    learning_rate: f64,
) -> Result<()> {
    latent.ensure_same_shape(gradient)?;
    if mask.dims() != (latent.height(), latent.width()) {
        return Err(Error::shape(
            alloc::format!("{}x{} mask", latent.height(), latent.width()),
            alloc::format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    if !gradient.is_finite() {
        return Err(Error::OptimizationDiverged { iteration: 0 });
    }
    let m = mask.values();
    for c in 0..latent.channels() {
        let g = gradient.plane(c);
        for ((z, gi), mi) in latent.plane_mut(c).iter_mut().zip(g).zip(m) {
            if *mi != 0.0 {
                *z -= learning_rate * mi * gi;
            }
        }
    }
    Ok(())
}

/// State of one edit between the latent warp and the final denoise.
///
/// `original` is the warped latent at the drag timestep and is never
/// modified; a copy of it is denoised alongside the edit so guidance and
/// tracking always compare against the same timestep.
#[derive(Debug, Clone)]
pub struct EditSession<'a> {
    config: DragConfig,
    denoiser: &'a ToyDenoiser,
    schedule: &'a NoiseSchedule,
    head: &'a ReadoutHead,
    original: LatentField,
    reference_latent: LatentField,
    reference_embedding: LatentField,
    current: LatentField,
    mask: SoftMask,
    track: TrackState,
    iteration: usize,
}

impl<'a> EditSession<'a> {
    /// `drags` are in latent coordinates; `mask` is at latent resolution.
    pub fn new(
        original: LatentField,
        mask: SoftMask,
        drags: &[Drag],
        config: DragConfig,
        head: &'a ReadoutHead,
        denoiser: &'a ToyDenoiser,
        schedule: &'a NoiseSchedule,
    ) -> Result<Self> {
        config.validate()?;
        if mask.dims() != (original.height(), original.width()) {
            return Err(Error::shape(
                alloc::format!("{}x{} mask", original.height(), original.width()),
                alloc::format!("{}x{}", mask.dims().0, mask.dims().1),
            ));
        }
        let features = extract_features(&original, denoiser);
        let track = TrackState::new(drags, &features)?;
        let reference_embedding = reference_embedding(&original, head, denoiser)?;
        Ok(Self {
            config,
            denoiser,
            schedule,
            head,
            reference_latent: original.clone(),
            current: original.clone(),
            original,
            reference_embedding,
            mask,
            track,
            iteration: 0,
        })
    }

    pub fn original(&self) -> &LatentField {
        &self.original
    }

    pub fn current(&self) -> &LatentField {
        &self.current
    }

    pub fn mask(&self) -> &SoftMask {
        &self.mask
    }

    pub fn track(&self) -> &TrackState {
        &self.track
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &DragConfig {
        &self.config
    }

    pub fn into_current(self) -> LatentField {
        self.current
    }

    /// Loss terms at `latent` with the stop-gradient side taken from
    /// `frozen` and the handles from the current track state.
    pub fn objective(&self, latent: &LatentField, frozen: &FeatureField) -> Result<Objective> {
        let drags = self.track.active_drags();
        let features = extract_features(latent, self.denoiser);
        let r = self.config.patch_radius;
        let (drag, mut fgrad) = drag_loss(&features, frozen, &drags, r)?;
        let (motion, ms_grad) = motion_supervision_loss(&features, frozen, &drags, r)?;
        if self.config.motion_supervision {
            for (a, b) in fgrad.layers_mut().iter_mut().zip(ms_grad.layers()) {
                a.add_scaled(b, 1.0)?;
            }
        }
        let mut gradient =
            features_adjoint(&fgrad, self.denoiser)?.with_timestep(latent.timestep());
        let mut total = drag
            + if self.config.motion_supervision {
                motion
            } else {
                0.0
            };
        let mut guidance = 0.0;
        if self.config.rg_weight > 0.0 {
            let (l, g) = rg_loss(latent, &self.reference_embedding, self.head, self.denoiser)?;
            guidance = l;
            total += self.config.rg_weight * l;
            gradient.add_scaled(&g, self.config.rg_weight)?;
        }
        Ok(Objective {
            drag,
            motion,
            guidance,
            total,
            gradient,
        })
    }

    /// One masked gradient step followed by tracking. Returns `None` when
    /// every pair has already converged.
    pub fn drag_step(&mut self) -> Result<Option<Objective>> {
        if self.track.all_converged() {
            return Ok(None);
        }
        let frozen = extract_features(&self.current, self.denoiser);
        let objective = self.objective(&self.current, &frozen)?;
        if !objective.gradient.is_finite() || !objective.total.is_finite() {
            return Err(Error::OptimizationDiverged {
                iteration: self.iteration,
            });
        }
        let mut next = self.current.clone();
        apply_masked_update(
            &mut next,
            self.mask.grid(),
            &objective.gradient,
            self.config.learning_rate,
        )
        .map_err(|e| match e {
            Error::OptimizationDiverged { .. } => Error::OptimizationDiverged {
                iteration: self.iteration,
            },
            other => other,
        })?;
        if !next.is_finite() {
            return Err(Error::OptimizationDiverged {
                iteration: self.iteration,
            });
        }
        self.current = next;
        track_points(
            &mut self.track,
            &extract_features(&self.current, self.denoiser),
            self.config.tracking_radius,
        )?;
        self.iteration += 1;
        Ok(Some(objective))
    }

    /// One backward DDIM step of both the edit and its reference.
    pub fn denoise_step(&mut self) -> Result<()> {
        let current = ddim_step(
            &self.current,
            Direction::Backward,
            self.denoiser,
            self.schedule,
        )?;
        let reference = ddim_step(
            &self.reference_latent,
            Direction::Backward,
            self.denoiser,
            self.schedule,
        )?;
        self.reference_embedding = reference_embedding(&reference, self.head, self.denoiser)?;
        self.track
            .set_reference(&extract_features(&reference, self.denoiser))?;
        self.current = current;
        self.reference_latent = reference;
        Ok(())
    }

    pub fn timestep(&self) -> usize {
        self.current.timestep()
    }

    pub fn handles(&self) -> Vec<crate::geometry::Vec2> {
        self.track.current().to_vec()
    }
}
