use alloc::vec::Vec;

use crate::error::Result;
use crate::fields::FeatureField;
use crate::geometry::{Drag, Vec2};

/// Sign with `sign(0) = 0`, the subgradient used for the L1 terms.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sum_q |F(q + offset) - sg(F)(q)|` over the square patch of radius `r`
/// around `center`, accumulating the gradient of the first term into `grad`.
fn patch_alignment(
    features: &FeatureField,
    frozen: &FeatureField,
    center: Vec2,
    offset: Vec2,
    radius: usize,
    grad: &mut FeatureField,
) -> Result<f64> {
    let r = radius as i64;
    let mut reference = Vec::with_capacity(features.feature_dim());
    let mut moved = Vec::with_capacity(features.feature_dim());
    let mut weights = Vec::with_capacity(features.feature_dim());
    let mut loss = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let q = center + Vec2::new(dx as f64, dy as f64);
            frozen.sample_point(q, &mut reference)?;
            features.sample_point(q + offset, &mut moved)?;
            weights.clear();
            for (m, s) in moved.iter().zip(&reference) {
                let d = m - s;
                loss += d.abs();
                weights.push(sign(d));
            }
            FeatureField::scatter_point(grad, q + offset, &weights)?;
        }
    }
    Ok(loss)
}

/// Direction toward the target, at most one cell long.
pub fn unit_step(delta: Vec2) -> Vec2 {
    match delta.normalized() {
        Some(dir) if delta.norm() > 1.0 => dir,
        _ => delta,
    }
}

/// Patch loss pulling the features around each target toward the frozen
/// features around the current handle. Returns the loss and its gradient
/// with respect to `features`; `frozen` is treated as a constant.
pub fn drag_loss(
    features: &FeatureField,
    frozen: &FeatureField,
    drags: &[Drag],
    radius: usize,
) -> Result<(f64, FeatureField)> {
    let mut grad = features.zeros_like();
    let mut loss = 0.0;
    for d in drags {
        loss += patch_alignment(features, frozen, d.handle, d.vector(), radius, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Like [`drag_loss`] with the displacement cut to a single [`unit_step`].
pub fn motion_supervision_loss(
    features: &FeatureField,
    frozen: &FeatureField,
    drags: &[Drag],
    radius: usize,
) -> Result<(f64, FeatureField)> {
    let mut grad = features.zeros_like();
    let mut loss = 0.0;
    for d in drags {
        loss += patch_alignment(
            features,
            frozen,
            d.handle,
            unit_step(d.vector()),
            radius,
            &mut grad,
        )?;
    }
    Ok((loss, grad))
}
