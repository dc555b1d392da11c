//! A configured engine shared by the CLI and the service.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use dragkit_core::diffusion::run_ddim;
use dragkit_core::engine::{
    decode_latent, run_drag_edit_observed, Backend, EditOutput, IterationRecord, RgbImage,
};
use dragkit_core::geometry::PointPair;
use dragkit_core::readout::{train_default_head, ReadoutHead};
use dragkit_core::softmask::{generate_soft_mask, SoftMask};

use crate::config::EngineConfig;
use crate::error::{AppError, Result};
use crate::formats;

pub struct Engine {
    config: EngineConfig,
    backend: Backend,
    file_head: Option<Arc<ReadoutHead>>,
    trained: Mutex<HashMap<u64, Arc<ReadoutHead>>>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate().map_err(|message| AppError::Config {
            path: "engine".into(),
            message,
        })?;
        let backend = config.backend()?;
        let file_head = match &config.readout.head_path {
            Some(path) => {
                let head = formats::read_head(path)?;
                if head.shape().layers != backend.denoiser.pyramid_levels() {
                    return Err(AppError::Head {
                        path: path.clone(),
                        message: format!(
                            "head taps {} layers but the denoiser has {}",
                            head.shape().layers,
                            backend.denoiser.pyramid_levels()
                        ),
                    });
                }
                Some(Arc::new(head))
            }
            None => None,
        };
        Ok(Self {
            config,
            backend,
            file_head,
            trained: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// The configured head file, or a head trained from `seed` (cached).
    pub fn head(&self, seed: u64) -> Result<Arc<ReadoutHead>> {
        if let Some(head) = &self.file_head {
            return Ok(head.clone());
        }
        let mut cache = self.trained.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(head) = cache.get(&seed) {
            return Ok(head.clone());
        }
        let outcome =
            train_default_head(&self.backend.denoiser, &self.config.readout.training, seed)?;
        let head = Arc::new(outcome.head);
        cache.insert(seed, head.clone());
        Ok(head)
    }

    /// Rejects images the latent grid cannot tile.
    pub fn check_image(&self, width: usize, height: usize) -> std::result::Result<(), String> {
        let f = self.backend.latent_factor;
        if width == 0 || height == 0 || !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(format!(
                "image is {width}x{height}; both sides must be positive multiples of {f}"
            ));
        }
        Ok(())
    }

    /// Soft mask at image resolution for `pairs`.
    pub fn mask(&self, width: usize, height: usize, pairs: &[PointPair]) -> Result<SoftMask> {
        Ok(generate_soft_mask(
            pairs,
            (height, width),
            self.config.drag.mask_sigma,
        )?)
    }

    pub fn edit(
        &self,
        image: &RgbImage,
        pairs: &[PointPair],
        seed: u64,
        observe: &mut dyn FnMut(&IterationRecord),
    ) -> Result<EditOutput> {
        if let Err(message) = self.check_image(image.width(), image.height()) {
            return Err(dragkit_core::Error::InvalidInput(message).into());
        }
        let head = self.head(seed)?;
        Ok(run_drag_edit_observed(
            image,
            pairs,
            &self.config.drag,
            &head,
            &self.backend,
            observe,
        )?)
    }

    /// Decodes a drag-timestep latent after a plain denoise to 0.
    pub fn render(&self, latent: &dragkit_core::fields::LatentField) -> Result<RgbImage> {
        let clean = run_ddim(latent, 0, &self.backend.denoiser, &self.backend.schedule)?;
        Ok(decode_latent(&clean, self.backend.latent_factor)?)
    }
}
