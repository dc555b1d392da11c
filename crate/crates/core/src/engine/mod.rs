//! The drag optimizer: patch losses, masked latent updates, point tracking,
//! the alternating drag/denoise schedule, and the end-to-end edit pipeline.

mod config;
mod losses;
mod pipeline;
mod schedule;
mod session;
mod tracking;

pub use config::DragConfig;
pub use losses::{drag_loss, motion_supervision_loss, unit_step};
pub use pipeline::{
    blob_scene, decode_latent, encode_image, mean_distance, run_drag_edit, run_drag_edit_observed,
    Backend, EditOutput, EditReport, IterationRecord, RgbImage, LATENT_CHANNELS,
};
pub use schedule::{aldd_schedule, Action};
pub use session::{apply_masked_update, EditSession, Objective};
pub use tracking::{track_points, TrackState};
