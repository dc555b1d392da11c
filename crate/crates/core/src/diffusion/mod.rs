//! A small deterministic stand-in for a latent diffusion backbone.
//!
//! The denoiser's clean-latent prediction is a Gaussian smoothing of the
//! noisy latent, and its features are a smoothed, strided pyramid. Every
//! operator is linear, so every gradient downstream is exact.

mod ddim;
mod denoiser;
mod schedule;

pub use ddim::{ddim_step, run_ddim, Direction};
pub use denoiser::{
    extract_features, features_adjoint, predict_noise, FeaturePyramid, ToyDenoiser,
};
pub use schedule::{forward_noise, NoiseSchedule};
