use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::FeatureField;
use crate::geometry::{Drag, Vec2};

/// Handles being dragged, where they are now, and what they looked like.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrackState {
    initial: Vec<Vec2>,
    current: Vec<Vec2>,
    targets: Vec<Vec2>,
    reference: Vec<Vec<f64>>,
    converged: Vec<bool>,
}

impl TrackState {
    /// Starts tracking every drag at its handle; `features` supply the
    /// reference vector matched by later searches.
    pub fn new(drags: &[Drag], features: &FeatureField) -> Result<Self> {
        if drags.is_empty() {
            return Err(Error::invalid("tracking needs at least one pair"));
        }
        let (h, w) = (features.source().height, features.source().width);
        let inside =
            |p: Vec2| p.x >= 0.0 && p.y >= 0.0 && p.x <= (w - 1) as f64 && p.y <= (h - 1) as f64;
        if let Some(d) = drags
            .iter()
            .find(|d| !inside(d.handle) || !inside(d.target))
        {
            return Err(Error::invalid(alloc::format!(
                "pair ({}, {}) -> ({}, {}) outside {w}x{h} grid",
                d.handle.x,
                d.handle.y,
                d.target.x,
                d.target.y
            )));
        }
        let mut state = Self {
            initial: drags.iter().map(|d| d.handle).collect(),
            current: drags.iter().map(|d| d.handle).collect(),
            targets: drags.iter().map(|d| d.target).collect(),
            reference: Vec::new(),
            converged: alloc::vec![false; drags.len()],
        };
        state.set_reference(features)?;
        state.update_convergence();
        Ok(state)
    }

    /// Re-samples the reference vectors at the initial handles.
    pub fn set_reference(&mut self, features: &FeatureField) -> Result<()> {
        self.reference = self
            .initial
            .iter()
            .map(|&p| {
                let mut v = Vec::new();
                features.sample_point(p, &mut v).map(|_| v)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn update_convergence(&mut self) {
        for ((c, p), t) in self
            .converged
            .iter_mut()
            .zip(&self.current)
            .zip(&self.targets)
        {
            *c = *c || (*t - *p).norm() < 1.0;
        }
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn initial(&self) -> &[Vec2] {
        &self.initial
    }

    pub fn current(&self) -> &[Vec2] {
        &self.current
    }

    pub fn targets(&self) -> &[Vec2] {
        &self.targets
    }

    pub fn converged(&self) -> &[bool] {
        &self.converged
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    /// Current handle → target for every pair still moving.
    pub fn active_drags(&self) -> Vec<Drag> {
        self.current
            .iter()
            .zip(&self.targets)
            .zip(&self.converged)
            .filter(|(_, c)| !**c)
            .map(|((p, t), _)| Drag::new(*p, *t))
            .collect()
    }
}

/// Moves each unconverged handle to the integer offset within `radius`
/// whose feature vector is closest (L1) to its reference. Ties go to the
/// shorter offset, then to the smaller `(dy, dx)`.
pub fn track_points(state: &mut TrackState, features: &FeatureField, radius: usize) -> Result<()> {
    let (h, w) = (
        features.source().height as f64,
        features.source().width as f64,
    );
    let r = radius as i64;
    let mut candidate = Vec::with_capacity(features.feature_dim());
    for i in 0..state.len() {
        if state.converged[i] {
            continue;
        }
        let origin = state.current[i];
        let reference = &state.reference[i];
        let mut best: Option<(f64, i64, i64, i64)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let p = origin + Vec2::new(dx as f64, dy as f64);
                if p.x < 0.0 || p.y < 0.0 || p.x > w - 1.0 || p.y > h - 1.0 {
                    continue;
                }
                features.sample_point(p, &mut candidate)?;
                let dist: f64 = candidate
                    .iter()
                    .zip(reference)
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                let key = (dist, dx * dx + dy * dy, dy, dx);
                let better = match best {
                    None => true,
                    Some(b) => (key.0, key.1, key.2, key.3) < (b.0, b.1, b.2, b.3),
                };
                if better {
                    best = Some(key);
                }
            }
        }
        if let Some((_, _, dy, dx)) = best {
            state.current[i] = origin + Vec2::new(dx as f64, dy as f64);
        }
    }
    state.update_convergence();
    Ok(())
}
