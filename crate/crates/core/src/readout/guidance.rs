use crate::diffusion::{extract_features, features_adjoint, ToyDenoiser};
use crate::error::{Error, Result};
use crate::fields::{FieldShape, LatentField};
use crate::math;

use super::head::ReadoutHead;

/// Embedding of the original latent at its own timestep, captured once
/// before any dragging.
pub fn reference_embedding(
    original: &LatentField,
    head: &ReadoutHead,
    denoiser: &ToyDenoiser,
) -> Result<LatentField> {
    head.forward(&extract_features(original, denoiser), original.timestep())
}

/// `‖F(z) − F_ref‖²` over the embedding grid, with its gradient in `z`.
pub fn rg_loss(
    current: &LatentField,
    reference: &LatentField,
    head: &ReadoutHead,
    denoiser: &ToyDenoiser,
) -> Result<(f64, LatentField)> {
    let t = current.timestep();
    let features = extract_features(current, denoiser);
    let embedding = head.forward(&features, t)?;
    if embedding.shape() != reference.shape() {
        return Err(Error::invalid(alloc::format!(
            "reference embedding is {}, current embedding is {}",
            reference.shape(),
            embedding.shape()
        )));
    }
    let mut diff = embedding;
    diff.add_scaled(reference, -1.0)?;
    let loss = diff.dot(&diff);
    diff.scale(2.0);
    let (_, fgrad) = head.backward(&features, t, &diff, true)?;
    let fgrad = fgrad.expect("feature gradient requested");
    let grad = features_adjoint(&fgrad, denoiser)?.with_timestep(t);
    Ok((loss, grad))
}

/// Spectral norm of the linear part of `z ↦ F(z)` on latents of `shape`,
/// by power iteration.
pub fn guidance_gain(
    head: &ReadoutHead,
    denoiser: &ToyDenoiser,
    shape: FieldShape,
    iterations: usize,
) -> Result<f64> {
    let t = 0;
    let zero = LatentField::zeros(shape, t);
    let offset = reference_embedding(&zero, head, denoiser)?;
    // Deterministic start with energy in every cell.
    let mut v = LatentField::from_fn(shape, t, |c, x, y| {
        1.0 + ((c * 7 + x * 3 + y * 5) % 11) as f64 / 11.0
    });
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let norm = math::sqrt(v.dot(&v));
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.scale(1.0 / norm);
        // rg_loss at v against F(0) has gradient 2 AᵀA v.
        let (_, g) = rg_loss(&v, &offset, head, denoiser)?;
        lambda = 0.5 * g.dot(&v);
        v = g;
    }
    Ok(math::sqrt(lambda.max(0.0)))
}

/// Rescales the head so [`guidance_gain`] equals `target`. Cosine distances,
/// and so triplet losses, are unchanged.
pub fn normalize_gain(
    head: &ReadoutHead,
    denoiser: &ToyDenoiser,
    shape: FieldShape,
    target: f64,
) -> Result<ReadoutHead> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Configuration(
            "guidance gain must be positive".into(),
        ));
    }
    let gain = guidance_gain(head, denoiser, shape, 100)?;
    if gain == 0.0 {
        return Err(Error::Configuration(
            "readout head ignores its input".into(),
        ));
    }
    let mut params = head.params().clone();
    let k = target / gain;
    params
        .bottlenecks
        .iter_mut()
        .flatten()
        .for_each(|v| *v *= k);
    params
        .time_projections
        .iter_mut()
        .flatten()
        .for_each(|v| *v *= k);
    let mut out = head.clone();
    out.set_params(params)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::head::{ReadoutParams, ReadoutShape};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ChaCha8Rng, ToyDenoiser, ReadoutHead) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = ToyDenoiser::default();
        let shape = ReadoutShape {
            layers: 3,
            in_channels: 4,
            width: 4,
            time_dim: 6,
        };
        let head = ReadoutHead::random(shape, 0.2, &mut rng).unwrap();
        (rng, d, head)
    }

    fn random(rng: &mut ChaCha8Rng, shape: FieldShape, t: usize) -> LatentField {
        LatentField::from_fn(shape, t, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fixed_point_has_zero_loss_and_gradient() {
        let (mut rng, d, head) = setup(21);
        let z = random(&mut rng, FieldShape::new(4, 8, 8), 35);
        let r = reference_embedding(&z, &head, &d).unwrap();
        let (loss, grad) = rg_loss(&z, &r, &head, &d).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_is_twice_adjoint_of_residual() {
        // Build A explicitly by probing the affine map with unit latents.
        let (mut rng, d, head) = setup(22);
        let shape = FieldShape::new(4, 4, 4);
        let z0 = random(&mut rng, shape, 10);
        let z = random(&mut rng, shape, 10);
        let embed = |x: &LatentField| {
            head.forward(&extract_features(x, &d), 10)
                .unwrap()
                .into_values()
        };
        let offset = embed(&LatentField::zeros(shape, 10));
        let n = shape.len();
        let columns: vec::Vec<vec::Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = LatentField::zeros(shape, 10);
                e.values_mut()[j] = 1.0;
                embed(&e).iter().zip(&offset).map(|(a, b)| a - b).collect()
            })
            .collect();
        let az: vec::Vec<f64> = embed(&z);
        let az0: vec::Vec<f64> = embed(&z0);
        let resid: vec::Vec<f64> = az.iter().zip(&az0).map(|(a, b)| a - b).collect();
        let r = reference_embedding(&z0, &head, &d).unwrap();
        let (loss, grad) = rg_loss(&z, &r, &head, &d).unwrap();
        let want_loss: f64 = resid.iter().map(|v| v * v).sum();
        assert!((loss - want_loss).abs() <= 1e-10 * want_loss.max(1.0));
        for (j, column) in columns.iter().enumerate() {
            let want: f64 = 2.0 * column.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>();
            assert!((grad.values()[j] - want).abs() < 1e-9, "cell {j}");
        }
    }

    #[test]
    fn latent_gradient_matches_differences() {
        let (mut rng, d, head) = setup(23);
        let shape = FieldShape::new(4, 8, 8);
        for _ in 0..20 {
            let z0 = random(&mut rng, shape, 35);
            let z = random(&mut rng, shape, 35);
            let r = reference_embedding(&z0, &head, &d).unwrap();
            let (_, grad) = rg_loss(&z, &r, &head, &d).unwrap();
            let h = 1e-5;
            for j in (0..shape.len()).step_by(17) {
                let eval = |delta: f64| {
                    let mut y = z.clone();
                    y.values_mut()[j] += delta;
                    rg_loss(&y, &r, &head, &d).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let g = grad.values()[j];
                assert!(
                    (fd - g).abs() <= 1e-4 * fd.abs().max(1e-3),
                    "cell {j}: {fd} vs {g}"
                );
            }
        }
    }

    #[test]
    fn null_space_perturbation_leaves_loss_unchanged() {
        // A head that reads no information from channel 3 annihilates any
        // perturbation confined to that channel.
        let (mut rng, d, head) = setup(24);
        let mut p: ReadoutParams = head.params().clone();
        for b in p.bottlenecks.iter_mut() {
            for e in 0..head.shape().width {
                b[e * 4 + 3] = 0.0;
            }
        }
        let mut head = head;
        head.set_params(p).unwrap();
        let shape = FieldShape::new(4, 8, 8);
        let z0 = random(&mut rng, shape, 35);
        let z = random(&mut rng, shape, 35);
        let r = reference_embedding(&z0, &head, &d).unwrap();
        let base = rg_loss(&z, &r, &head, &d).unwrap().0;
        let mut moved = z.clone();
        for v in moved.plane_mut(3) {
            *v += rng.random_range(-5.0..5.0);
        }
        let after = rg_loss(&moved, &r, &head, &d).unwrap().0;
        assert!((after - base).abs() <= 1e-8);
    }

    #[test]
    fn shape_mismatch_is_invalid_input() {
        let (mut rng, d, head) = setup(25);
        let z = random(&mut rng, FieldShape::new(4, 8, 8), 35);
        let other = random(&mut rng, FieldShape::new(4, 6, 6), 35);
        let r = reference_embedding(&other, &head, &d).unwrap();
        assert!(matches!(
            rg_loss(&z, &r, &head, &d),
            Err(Error::InvalidInput(_))
        ));
    }
}

#[cfg(test)]
mod gain_tests {
    use super::*;
    use crate::diffusion::extract_features;
    use crate::readout::head::ReadoutShape;
    use crate::readout::triplet::{triplet_loss, TripletBatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gain_of_identity_single_layer_head() {
        // F = identity on channels 0..2 of the unsmoothed top layer at weight 1,
        // plus a coarser layer at weight 0: spectral norm is that of the
        // level-0 blur, whose peak response at zero frequency is 1.
        let d = ToyDenoiser::new(0.5, alloc::vec![0.5, 1.0]).unwrap();
        let shape = ReadoutShape {
            layers: 2,
            in_channels: 4,
            width: 2,
            time_dim: 2,
        };
        let head = ReadoutHead::identity(shape, alloc::vec![1.0, 0.0], 0.2).unwrap();
        let g = guidance_gain(&head, &d, FieldShape::new(4, 8, 8), 200).unwrap();
        assert!((g - 1.0).abs() < 1e-6, "{g}");
    }

    #[test]
    fn normalization_hits_target_and_keeps_triplet_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = ToyDenoiser::default();
        let shape = ReadoutShape {
            layers: 3,
            in_channels: 4,
            width: 4,
            time_dim: 4,
        };
        let head = ReadoutHead::random(shape, 0.5, &mut rng).unwrap();
        let fs = FieldShape::new(4, 8, 8);
        let scaled = normalize_gain(&head, &d, fs, 0.2).unwrap();
        assert!((guidance_gain(&scaled, &d, fs, 200).unwrap() - 0.2).abs() < 1e-3);
        let mut latent = || LatentField::from_fn(fs, 35, |_, _, _| rng.random_range(-1.0..1.0));
        let (a, p, n) = (latent(), latent(), latent());
        let b = TripletBatch::new(
            extract_features(&a, &d),
            extract_features(&p, &d),
            extract_features(&n, &d),
            35,
        )
        .unwrap();
        let before = triplet_loss(&b, &head).unwrap();
        let after = triplet_loss(&b, &scaled).unwrap();
        assert!((before - after).abs() < 1e-12);
    }
}
