//! Appearance readout: a light aggregation head over the denoiser's feature
//! pyramid, its triplet training, and the guidance loss that keeps an edit's
//! embedding close to the original image's.

mod guidance;
mod head;
mod synthetic;
mod train;
mod triplet;

pub use guidance::{guidance_gain, normalize_gain, reference_embedding, rg_loss};
pub use head::{timestep_embedding, ReadoutHead, ReadoutParams, ReadoutShape};
pub use synthetic::{synthetic_triplets, SyntheticTripletConfig};
pub use train::{
    mean_triplet_loss, mean_triplet_loss_with_grad, train_default_head, train_readout,
    HeadTraining, TrainingOutcome,
};
pub use triplet::{
    cosine_distance, cosine_distance_with_grad, triplet_loss, triplet_loss_with_grad, TripletBatch,
};
