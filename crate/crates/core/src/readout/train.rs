use alloc::vec::Vec;

use crate::error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::ToyDenoiser;

use super::guidance::normalize_gain;
use super::head::{ReadoutHead, ReadoutParams, ReadoutShape};
use super::synthetic::{synthetic_triplets, SyntheticTripletConfig};
use super::triplet::{triplet_loss, triplet_loss_with_grad, TripletBatch};

/// Halvings tried before a step is declared stalled.
const MAX_BACKTRACKS: usize = 40;

/// Result of [`train_readout`].
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub head: ReadoutHead,
    /// Mean loss before training, then after every accepted step.
    pub losses: Vec<f64>,
    /// True when a step could not lower the loss at any step size.
    pub stalled: bool,
}

impl TrainingOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self
            .losses
            .last()
            .expect("loss log starts with the initial loss")
    }
}

pub fn mean_triplet_loss(dataset: &[TripletBatch], head: &ReadoutHead) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("triplet dataset is empty"));
    }
    let mut total = 0.0;
    for batch in dataset {
        total += triplet_loss(batch, head)?;
    }
    Ok(total / dataset.len() as f64)
}

pub fn mean_triplet_loss_with_grad(
    dataset: &[TripletBatch],
    head: &ReadoutHead,
) -> Result<(f64, ReadoutParams)> {
    if dataset.is_empty() {
        return Err(Error::invalid("triplet dataset is empty"));
    }
    let mut total = 0.0;
    let mut grad = ReadoutParams::zeros(head.shape());
    for batch in dataset {
        let (l, g) = triplet_loss_with_grad(batch, head)?;
        total += l;
        grad.add_scaled(&g, 1.0);
    }
    let n = dataset.len() as f64;
    grad.scale(1.0 / n);
    Ok((total / n, grad))
}

/// Full-batch gradient descent on the mean triplet loss.
///
/// Each step starts at `learning_rate` and halves it until the loss drops,
/// so the recorded losses never increase. Training ends early once the loss
/// reaches zero or no step size helps.
pub fn train_readout(
    dataset: &[TripletBatch],
    head: &ReadoutHead,
    steps: usize,
    learning_rate: f64,
) -> Result<TrainingOutcome> {
    if !(learning_rate > 0.0) || !learning_rate.is_finite() {
        return Err(Error::Configuration(
            "learning rate must be positive".into(),
        ));
    }
    let mut current = head.clone();
    let (mut loss, mut grad) = mean_triplet_loss_with_grad(dataset, &current)?;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { step: 0 });
    }
    let mut losses = alloc::vec![loss];
    let mut stalled = false;
    for step in 1..=steps {
        if loss == 0.0 {
            break;
        }
        let mut lr = learning_rate;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut params = current.params().clone();
            params.add_scaled(&grad, -lr);
            if !params.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            let mut candidate = current.clone();
            candidate.set_params(params)?;
            let l = mean_triplet_loss(dataset, &candidate)?;
            if !l.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            if l < loss {
                accepted = Some(candidate);
                break;
            }
            lr *= 0.5;
        }
        let Some(next) = accepted else {
            stalled = true;
            break;
        };
        current = next;
        let (l, g) = mean_triplet_loss_with_grad(dataset, &current)?;
        loss = l;
        grad = g;
        losses.push(loss);
    }
    Ok(TrainingOutcome {
        head: current,
        losses,
        stalled,
    })
}

/// Recipe for the head used when no trained parameters are supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HeadTraining {
    pub triplets: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub width: usize,
    pub time_dim: usize,
    pub margin: f64,
    /// Spectral gain the trained head is rescaled to.
    pub gain: f64,
}

impl Default for HeadTraining {
    fn default() -> Self {
        Self {
            triplets: 50,
            steps: 200,
            learning_rate: 1e-2,
            width: 8,
            time_dim: 8,
            margin: 0.2,
            gain: 0.05,
        }
    }
}

/// Initializes a head from `seed`, trains it on synthetic triplets drawn
/// from the same seed, and rescales it to the recipe's gain.
pub fn train_default_head(
    denoiser: &ToyDenoiser,
    recipe: &HeadTraining,
    seed: u64,
) -> Result<TrainingOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ReadoutShape {
        layers: denoiser.pyramid_levels(),
        in_channels: crate::engine::LATENT_CHANNELS,
        width: recipe.width,
        time_dim: recipe.time_dim,
    };
    let head = ReadoutHead::random(shape, recipe.margin, &mut rng)?;
    let cfg = SyntheticTripletConfig {
        count: recipe.triplets,
        ..Default::default()
    };
    let data = synthetic_triplets(&cfg, denoiser, &mut rng)?;
    let mut outcome = train_readout(&data, &head, recipe.steps, recipe.learning_rate)?;
    outcome.head = normalize_gain(&outcome.head, denoiser, cfg.shape, recipe.gain)?;
    Ok(outcome)
}
