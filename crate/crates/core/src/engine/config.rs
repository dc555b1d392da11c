use crate::error::{Error, Result};

/// Knobs of the drag optimizer. Lengths are in latent cells.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DragConfig {
    /// Drag steps between consecutive denoising steps.
    pub drag_steps_per_denoise: usize,
    /// Denoising steps interleaved with dragging.
    pub aldd_denoise_steps: usize,
    pub patch_radius: usize,
    pub tracking_radius: usize,
    pub learning_rate: f64,
    pub max_drag_iterations: usize,
    pub rg_weight: f64,
    /// Fraction of each drag applied by the latent warp.
    pub rho: f64,
    /// Soft-mask blur in image pixels.
    pub mask_sigma: f64,
    /// Drag timestep as a fraction of the schedule length.
    pub timestep_fraction: f64,
    /// Add the one-cell motion supervision term to the objective.
    pub motion_supervision: bool,
}

impl Default for DragConfig {
    fn default() -> Self {
        Self {
            drag_steps_per_denoise: 10,
            aldd_denoise_steps: 10,
            patch_radius: 4,
            tracking_radius: 12,
            learning_rate: 0.02,
            max_drag_iterations: 100,
            rg_weight: 350.0,
            rho: 0.15,
            mask_sigma: 30.0,
            timestep_fraction: 0.7,
            motion_supervision: false,
        }
    }
}

impl DragConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Configuration(msg.into()));
        if self.drag_steps_per_denoise == 0 {
            return fail("drag_steps_per_denoise must be at least 1");
        }
        if self.patch_radius == 0 || self.tracking_radius == 0 {
            return fail("patch_radius and tracking_radius must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be positive");
        }
        if !(self.rg_weight >= 0.0) || !self.rg_weight.is_finite() {
            return fail("rg_weight must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail("rho must lie in [0, 1]");
        }
        if !(self.mask_sigma >= 0.0) || !self.mask_sigma.is_finite() {
            return fail("mask_sigma must be non-negative");
        }
        if !(self.timestep_fraction > 0.0 && self.timestep_fraction <= 1.0) {
            return fail("timestep_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = DragConfig::default();
        c.validate().unwrap();
        assert_eq!(c.rg_weight, 350.0);
        assert_eq!(c.rho, 0.15);
        assert_eq!(c.mask_sigma, 30.0);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            DragConfig {
                drag_steps_per_denoise: 0,
                ..Default::default()
            },
            DragConfig {
                patch_radius: 0,
                ..Default::default()
            },
            DragConfig {
                tracking_radius: 0,
                ..Default::default()
            },
            DragConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            DragConfig {
                rg_weight: -1.0,
                ..Default::default()
            },
            DragConfig {
                rho: 1.5,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        }
    }
}
