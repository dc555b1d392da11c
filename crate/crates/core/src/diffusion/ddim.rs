use alloc::format;

use crate::diffusion::denoiser::{predict_noise, ToyDenoiser};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::fields::LatentField;
use crate::math;

/// `Forward` inverts (t-1 -> t), `Backward` denoises (t -> t-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

const MAX_SOLVER_ITERATIONS: usize = 10_000;

/// One deterministic, unconditioned DDIM step from `zt.timestep()`.
///
/// The backward step is the usual update
/// `z_{t-1} = sqrt(ab_{t-1}) x0_hat + sqrt(1 - ab_{t-1}) eps_hat`.
/// Because the toy denoiser is linear, that update is the affine map
/// `z_{t-1} = a z_t + b S(z_t)`, and the forward step solves it exactly for
/// `z_t` with a Jacobi iteration instead of reusing `eps_hat(z_{t-1})`, so
/// the two directions are inverses of each other.
pub fn ddim_step(
    zt: &LatentField,
    direction: Direction,
    denoiser: &ToyDenoiser,
    schedule: &NoiseSchedule,
) -> Result<LatentField> {
    let t = zt.timestep();
    match direction {
        Direction::Backward => {
            if t == 0 || t > schedule.total_steps() {
                return Err(Error::InvalidStep(format!(
                    "cannot denoise from t = {t} (T = {})",
                    schedule.total_steps()
                )));
            }
            let prev = schedule.alpha_bar(t - 1)?;
            let eps = predict_noise(zt, t, denoiser, schedule)?;
            let x0 = denoiser.clean_prediction(zt);
            let (a, b) = (math::sqrt(prev), math::sqrt(1.0 - prev));
            let mut out = x0.with_timestep(t - 1);
            for (o, e) in out.values_mut().iter_mut().zip(eps.values()) {
                *o = a * *o + b * e;
            }
            Ok(out)
        }
        Direction::Forward => {
            if t >= schedule.total_steps() {
                return Err(Error::InvalidStep(format!(
                    "cannot invert past T = {} from t = {t}",
                    schedule.total_steps()
                )));
            }
            invert_step(zt, t + 1, denoiser, schedule)
        }
    }
}

/// Coefficients `(identity, smoothing)` of the backward map from `s` to `s-1`.
fn backward_coefficients(s: usize, schedule: &NoiseSchedule) -> Result<(f64, f64)> {
    let prev = schedule.alpha_bar(s - 1)?;
    let cur = schedule.alpha_bar(s)?;
    let ratio = math::sqrt(1.0 - prev) / math::sqrt(1.0 - cur);
    Ok((ratio, math::sqrt(prev) - ratio * math::sqrt(cur)))
}

fn invert_step(
    target: &LatentField,
    s: usize,
    denoiser: &ToyDenoiser,
    schedule: &NoiseSchedule,
) -> Result<LatentField> {
    let (a, b) = backward_coefficients(s, schedule)?;
    let smoothing = denoiser.smoothing();
    if smoothing.is_identity() {
        let mut out = target.clone().with_timestep(s);
        out.scale(1.0 / (a + b));
        return Ok(out);
    }
    // Split S = c I + R; R has non-negative entries and row sums 1 - c, so
    // z <- (y - b R z) / (a + b c) contracts whenever c > 1/2.
    let c = smoothing.center_weight_2d();
    let diag = a + b * c;
    let scale = target.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-15 * scale / (1.0 - b * (1.0 - c) / diag).max(1e-3);
    let mut z = target.clone().with_timestep(s);
    z.scale(1.0 / (a + b));
    for _ in 0..MAX_SOLVER_ITERATIONS {
        let sz = smoothing.apply_latent(&z);
        let mut max_delta = 0.0f64;
        for ((zi, szi), yi) in z
            .values_mut()
            .iter_mut()
            .zip(sz.values())
            .zip(target.values())
        {
            let next = (yi - b * (szi - c * *zi)) / diag;
            max_delta = max_delta.max((next - *zi).abs());
            *zi = next;
        }
        if max_delta <= tol {
            return Ok(z);
        }
    }
    Err(Error::SolverDidNotConverge {
        iterations: MAX_SOLVER_ITERATIONS,
    })
}

/// Steps repeatedly until the latent reaches timestep `to`.
pub fn run_ddim(
    z: &LatentField,
    to: usize,
    denoiser: &ToyDenoiser,
    schedule: &NoiseSchedule,
) -> Result<LatentField> {
    if to > schedule.total_steps() {
        return Err(Error::InvalidStep(format!(
            "target timestep {to} outside [0, {}]",
            schedule.total_steps()
        )));
    }
    let mut cur = z.clone();
    while cur.timestep() != to {
        let dir = if cur.timestep() < to {
            Direction::Forward
        } else {
            Direction::Backward
        };
        cur = ddim_step(&cur, dir, denoiser, schedule)?;
    }
    Ok(cur)
}
