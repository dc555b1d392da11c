use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::fields::resample::{decimate, decimate_adjoint, strided_dims};
use crate::fields::{Blur, FeatureField, LatentField};
use crate::math;

/// Smoothed, strided feature pyramid: layer `l` is the latent blurred at
/// `sigmas[l]` and kept every `2^l` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    sigmas: Vec<f64>,
    blurs: Vec<Blur>,
}

impl FeaturePyramid {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::Configuration(
                "feature pyramid needs at least one layer".into(),
            ));
        }
        if sigmas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Configuration(
                "pyramid sigmas must be non-decreasing".into(),
            ));
        }
        let blurs = sigmas
            .iter()
            .map(|&s| Blur::new(s))
            .collect::<Result<Vec<_>>>()
            .map_err(|_| {
                Error::Configuration("pyramid sigmas must be finite and non-negative".into())
            })?;
        Ok(Self { sigmas, blurs })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }

    pub fn stride(&self, level: usize) -> usize {
        1 << level
    }

    pub fn extract(&self, z: &LatentField) -> FeatureField {
        let (h, w) = (z.height(), z.width());
        let mut layers = Vec::with_capacity(self.levels());
        let mut strides = Vec::with_capacity(self.levels());
        for (level, blur) in self.blurs.iter().enumerate() {
            let stride = self.stride(level);
            let (hd, wd) = strided_dims(h, w, stride);
            let mut values = Vec::with_capacity(z.channels() * hd * wd);
            for c in 0..z.channels() {
                let smoothed = blur.apply(z.plane(c), h, w);
                values.extend(decimate(&smoothed, h, w, stride));
            }
            layers.push(
                LatentField::new(z.channels(), hd, wd, values, z.timestep())
                    .expect("pyramid layer from finite latent"),
            );
            strides.push(stride);
        }
        FeatureField::new(layers, strides, z.shape(), z.timestep())
            .expect("pyramid layers shrink monotonically")
    }

    /// Transpose of [`FeaturePyramid::extract`]: maps a gradient over the
    /// features back onto the latent.
    pub fn adjoint(&self, grad: &FeatureField) -> Result<LatentField> {
        if grad.num_layers() != self.levels() {
            return Err(Error::shape(
                format!("{} feature layers", self.levels()),
                format!("{}", grad.num_layers()),
            ));
        }
        let src = grad.source();
        let (h, w) = (src.height, src.width);
        let mut out = LatentField::zeros(src, grad.timestep());
        for (level, blur) in self.blurs.iter().enumerate() {
            let layer = grad.layer(level);
            let stride = self.stride(level);
            for c in 0..src.channels {
                let up = decimate_adjoint(layer.plane(c), h, w, stride);
                let back = blur.apply_adjoint(&up, h, w);
                for (o, b) in out.plane_mut(c).iter_mut().zip(back) {
                    *o += b;
                }
            }
        }
        Ok(out)
    }
}

/// Deterministic linear denoiser. Its clean-latent prediction is the latent
/// smoothed at `smoothing_sigma`; its features come from a [`FeaturePyramid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    smoothing_sigma: f64,
    smoothing: Blur,
    pyramid: FeaturePyramid,
}

impl ToyDenoiser {
    /// Largest smoothing sigma for which exact DDIM inversion is guaranteed
    /// to converge (interior 2-D self-weight above one half).
    pub const MAX_SMOOTHING_SIGMA: f64 = 0.55;

    pub fn new(smoothing_sigma: f64, pyramid_sigmas: Vec<f64>) -> Result<Self> {
        if pyramid_sigmas.len() < 2 {
            return Err(Error::Configuration(
                "toy denoiser needs at least two pyramid levels".into(),
            ));
        }
        if pyramid_sigmas.iter().any(|&s| !(s > 0.0))
            || pyramid_sigmas.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Configuration(
                "pyramid sigmas must be positive and strictly increasing".into(),
            ));
        }
        let smoothing = Blur::new(smoothing_sigma).map_err(|_| {
            Error::Configuration("smoothing sigma must be finite and non-negative".into())
        })?;
        if !smoothing.is_identity() && smoothing.center_weight_2d() <= 0.5 {
            return Err(Error::Configuration(format!(
                "smoothing sigma {smoothing_sigma} too wide for exact inversion (max {})",
                Self::MAX_SMOOTHING_SIGMA
            )));
        }
        Ok(Self {
            smoothing_sigma,
            smoothing,
            pyramid: FeaturePyramid::new(pyramid_sigmas)?,
        })
    }

    pub fn smoothing_sigma(&self) -> f64 {
        self.smoothing_sigma
    }

    pub fn smoothing(&self) -> &Blur {
        &self.smoothing
    }

    pub fn pyramid(&self) -> &FeaturePyramid {
        &self.pyramid
    }

    pub fn pyramid_levels(&self) -> usize {
        self.pyramid.levels()
    }

    /// The toy clean prediction `S(z)`.
    pub fn clean_prediction(&self, z: &LatentField) -> LatentField {
        self.smoothing.apply_latent(z)
    }
}

impl Default for ToyDenoiser {
    fn default() -> Self {
        Self::new(0.5, vec![0.5, 1.0, 2.0]).expect("default denoiser is valid")
    }
}

/// `eps_hat = (z_t - sqrt(alpha_bar_t) S(z_t)) / sqrt(1 - alpha_bar_t)`.
pub fn predict_noise(
    zt: &LatentField,
    t: usize,
    denoiser: &ToyDenoiser,
    schedule: &NoiseSchedule,
) -> Result<LatentField> {
    if t == 0 {
        return Err(Error::InvalidStep(
            "noise prediction is undefined at t = 0".into(),
        ));
    }
    let ab = schedule.alpha_bar(t)?;
    let (a, inv_b) = (math::sqrt(ab), 1.0 / math::sqrt(1.0 - ab));
    let smooth = denoiser.clean_prediction(zt);
    let mut out = zt.clone().with_timestep(t);
    for (o, s) in out.values_mut().iter_mut().zip(smooth.values()) {
        *o = (*o - a * s) * inv_b;
    }
    Ok(out)
}

pub fn extract_features(zt: &LatentField, denoiser: &ToyDenoiser) -> FeatureField {
    denoiser.pyramid.extract(zt)
}

pub fn features_adjoint(grad: &FeatureField, denoiser: &ToyDenoiser) -> Result<LatentField> {
    denoiser.pyramid.adjoint(grad)
}
