use crate::error::{Error, Result};
use crate::fields::{FeatureField, LatentField};
use crate::math;

use super::head::{ReadoutHead, ReadoutParams};

/// Norms at or below this make the cosine distance undefined.
const NORM_EPSILON: f64 = 1e-12;

/// Anchor, positive and negative features, all taken at the same timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    anchor: FeatureField,
    positive: FeatureField,
    negative: FeatureField,
    timestep: usize,
}

impl TripletBatch {
    pub fn new(
        anchor: FeatureField,
        positive: FeatureField,
        negative: FeatureField,
        timestep: usize,
    ) -> Result<Self> {
        let same = |a: &FeatureField, b: &FeatureField| {
            a.strides() == b.strides()
                && a.source() == b.source()
                && a.layers()
                    .iter()
                    .zip(b.layers())
                    .all(|(x, y)| x.shape() == y.shape())
        };
        if !same(&anchor, &positive) || !same(&anchor, &negative) {
            return Err(Error::invalid(
                "triplet members must share one feature layout",
            ));
        }
        Ok(Self {
            anchor,
            positive,
            negative,
            timestep,
        })
    }

    pub fn anchor(&self) -> &FeatureField {
        &self.anchor
    }

    pub fn positive(&self) -> &FeatureField {
        &self.positive
    }

    pub fn negative(&self) -> &FeatureField {
        &self.negative
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }
}

fn norms(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::shape(
            alloc::format!("{} values", x.len()),
            alloc::format!("{}", y.len()),
        ));
    }
    let nx = math::sqrt(x.iter().map(|v| v * v).sum());
    let ny = math::sqrt(y.iter().map(|v| v * v).sum());
    if !(nx > NORM_EPSILON && ny > NORM_EPSILON) {
        return Err(Error::CosineUndefined);
    }
    let dot = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((nx, ny, dot))
}

/// `1 − cos(x, y)` on flattened vectors.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    let (nx, ny, dot) = norms(x, y)?;
    Ok(1.0 - dot / (nx * ny))
}

/// Cosine distance with its gradients with respect to `x` and `y`.
pub fn cosine_distance_with_grad(
    x: &[f64],
    y: &[f64],
) -> Result<(f64, alloc::vec::Vec<f64>, alloc::vec::Vec<f64>)> {
    let (nx, ny, dot) = norms(x, y)?;
    let cos = dot / (nx * ny);
    let inv = 1.0 / (nx * ny);
    let gx = x
        .iter()
        .zip(y)
        .map(|(a, b)| -(b * inv - cos * a / (nx * nx)))
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(a, b)| -(a * inv - cos * b / (ny * ny)))
        .collect();
    Ok((1.0 - cos, gx, gy))
}

/// `max(0, D(a, p) − D(a, n) + δ)` with the head's margin δ.
pub fn triplet_loss(batch: &TripletBatch, head: &ReadoutHead) -> Result<f64> {
    let t = batch.timestep;
    let a = head.forward(&batch.anchor, t)?;
    let p = head.forward(&batch.positive, t)?;
    let n = head.forward(&batch.negative, t)?;
    let dap = cosine_distance(a.values(), p.values())?;
    let dan = cosine_distance(a.values(), n.values())?;
    Ok((dap - dan + head.margin()).max(0.0))
}

/// Triplet loss and its gradient with respect to the head parameters.
///
/// At the hinge kink the zero branch is taken.
pub fn triplet_loss_with_grad(
    batch: &TripletBatch,
    head: &ReadoutHead,
) -> Result<(f64, ReadoutParams)> {
    let t = batch.timestep;
    let a = head.forward(&batch.anchor, t)?;
    let p = head.forward(&batch.positive, t)?;
    let n = head.forward(&batch.negative, t)?;
    let (dap, ga_p, gp) = cosine_distance_with_grad(a.values(), p.values())?;
    let (dan, ga_n, gn) = cosine_distance_with_grad(a.values(), n.values())?;
    let raw = dap - dan + head.margin();
    let mut grad = ReadoutParams::zeros(head.shape());
    if raw <= 0.0 {
        return Ok((0.0, grad));
    }
    let as_field = |like: &LatentField, v: alloc::vec::Vec<f64>| {
        LatentField::new(
            like.channels(),
            like.height(),
            like.width(),
            v,
            like.timestep(),
        )
    };
    let ga: alloc::vec::Vec<f64> = ga_p.iter().zip(&ga_n).map(|(x, y)| x - y).collect();
    let gn: alloc::vec::Vec<f64> = gn.into_iter().map(|v| -v).collect();
    for (features, g) in [
        (&batch.anchor, ga),
        (&batch.positive, gp),
        (&batch.negative, gn),
    ] {
        let (pg, _) = head.backward(features, t, &as_field(&a, g)?, false)?;
        grad.add_scaled(&pg, 1.0);
    }
    Ok((raw, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{extract_features, ToyDenoiser};
    use crate::fields::FieldShape;
    use crate::readout::head::ReadoutShape;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(angle: f64) -> Vec<f64> {
        vec![libm::cos(angle), libm::sin(angle)]
    }

    #[test]
    fn cosine_distance_basics() {
        assert!((cosine_distance(&[1.0, 0.0], &[2.0, 0.0]).unwrap()).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::CosineUndefined)
        ));
    }

    #[test]
    fn cosine_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, gx, gy) = cosine_distance_with_grad(&x, &y).unwrap();
            let h = 1e-6;
            for i in 0..7 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (cosine_distance(&xp, &y).unwrap() - cosine_distance(&xm, &y).unwrap())
                    / (2.0 * h);
                assert!((fd - gx[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                let fd = (cosine_distance(&x, &yp).unwrap() - cosine_distance(&x, &ym).unwrap())
                    / (2.0 * h);
                assert!((fd - gy[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    /// One-layer, two-channel features on a 1×1 grid so embeddings are plain
    /// 2-vectors under the identity head.
    fn vector_batch(a: Vec<f64>, p: Vec<f64>, n: Vec<f64>) -> (TripletBatch, ReadoutHead) {
        let field = |v: Vec<f64>| FeatureField::single(LatentField::new(2, 1, 1, v, 0).unwrap());
        let shape = ReadoutShape {
            layers: 1,
            in_channels: 2,
            width: 2,
            time_dim: 2,
        };
        let head = ReadoutHead::identity(shape, vec![1.0], 0.5).unwrap();
        (
            TripletBatch::new(field(a), field(p), field(n), 0).unwrap(),
            head,
        )
    }

    #[test]
    fn satisfied_margin_gives_zero() {
        // D(a,p) = 0, D(a,n) = 1.
        let (b, head) = vector_batch(unit(0.0), unit(0.0), unit(core::f64::consts::FRAC_PI_2));
        assert_eq!(triplet_loss(&b, &head).unwrap(), 0.0);
    }

    #[test]
    fn identical_positive_and_negative_give_margin() {
        let (b, head) = vector_batch(unit(0.3), unit(1.2), unit(1.2));
        assert!((triplet_loss(&b, &head).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn direct_arithmetic_case() {
        // cos = 0.2 → D = 0.8; cos = 0.8 → D = 0.2; 0.8 − 0.2 + 0.5 = 1.1.
        let (b, head) = vector_batch(unit(0.0), unit(libm::acos(0.2)), unit(libm::acos(0.8)));
        assert!((triplet_loss(&b, &head).unwrap() - 1.1).abs() < 1e-12);
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let a = FeatureField::single(LatentField::zeros(FieldShape::new(2, 2, 2), 0));
        let b = FeatureField::single(LatentField::zeros(FieldShape::new(2, 3, 2), 0));
        assert!(TripletBatch::new(a.clone(), a, b, 0).is_err());
    }

    #[test]
    fn parameter_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = ToyDenoiser::default();
        let shape = ReadoutShape {
            layers: 3,
            in_channels: 4,
            width: 3,
            time_dim: 4,
        };
        let fs = FieldShape::new(4, 6, 6);
        for trial in 0..20 {
            let mut latent = || LatentField::from_fn(fs, 20, |_, _, _| rng.random_range(-1.0..1.0));
            let (a, p, n) = (latent(), latent(), latent());
            let batch = TripletBatch::new(
                extract_features(&a, &d),
                extract_features(&p, &d),
                extract_features(&n, &d),
                20,
            )
            .unwrap();
            let head = ReadoutHead::random(shape, 2.5, &mut rng).unwrap();
            let (loss, grad) = triplet_loss_with_grad(&batch, &head).unwrap();
            assert!(loss > 0.0, "trial {trial} sits on the zero branch");
            let flat = head.params().flatten();
            let g = grad.flatten();
            let h = 1e-6;
            for i in (0..flat.len()).step_by(5) {
                let eval = |delta: f64| {
                    let mut q = flat.clone();
                    q[i] += delta;
                    let mut hh = head.clone();
                    hh.params_mut().assign_flat(&q).unwrap();
                    triplet_loss(&batch, &hh).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3),
                    "param {i}: fd {fd} vs {}",
                    g[i]
                );
            }
        }
    }
}
