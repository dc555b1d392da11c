use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::LatentField;
use crate::math;

/// Cumulative signal fractions `alpha_bar[t]` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine schedule (offset 0.008) with per-step betas clipped at
    /// 0.999 so that `alpha_bar[T]` stays positive.
    pub fn cosine(total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Configuration(
                "schedule needs at least one step".into(),
            ));
        }
        const OFFSET: f64 = 0.008;
        let f = |t: usize| {
            let u = (t as f64 / total_steps as f64 + OFFSET) / (1.0 + OFFSET);
            let c = math::cos(u * core::f64::consts::FRAC_PI_2);
            c * c
        };
        let f0 = f(0);
        let mut alpha_bar = Vec::with_capacity(total_steps + 1);
        alpha_bar.push(1.0);
        for t in 1..=total_steps {
            let target = f(t) / f0;
            let prev_target = f(t - 1) / f0;
            let beta = (1.0 - target / prev_target).clamp(0.0, 0.999);
            let prev = alpha_bar[t - 1];
            alpha_bar.push(prev * (1.0 - beta));
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Configuration(
                "schedule needs alpha_bar for t = 0..=T, T >= 1".into(),
            ));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::Configuration(
                "alpha_bar[0] must be exactly 1".into(),
            ));
        }
        for (t, pair) in alpha_bar.windows(2).enumerate() {
            if !(pair[1] < pair[0]) || !(pair[1] > 0.0) {
                return Err(Error::Configuration(format!(
                    "alpha_bar must be strictly decreasing and positive (t = {})",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    pub fn total_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or_else(|| {
            Error::InvalidStep(format!("timestep {t} outside [0, {}]", self.total_steps()))
        })
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `ceil(fraction * T)`, clamped to `[1, T]`.
    pub fn timestep_at_fraction(&self, fraction: f64) -> usize {
        let t = math::ceil(fraction * self.total_steps() as f64);
        (t.max(1.0) as usize).min(self.total_steps())
    }
}

/// `z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_noise(
    z0: &LatentField,
    t: usize,
    eps: &LatentField,
    schedule: &NoiseSchedule,
) -> Result<LatentField> {
    z0.ensure_same_shape(eps)?;
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (math::sqrt(ab), math::sqrt(1.0 - ab));
    let mut out = z0.clone().with_timestep(t);
    for (o, e) in out.values_mut().iter_mut().zip(eps.values()) {
        *o = a * *o + b * e;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldShape;
    use alloc::vec;

    #[test]
    fn cosine_schedule_invariants() {
        let s = NoiseSchedule::cosine(50).unwrap();
        assert_eq!(s.total_steps(), 50);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!(s.alpha_bar(50).unwrap() > 0.0);
        for w in s.alpha_bars().windows(2) {
            assert!(w[1] < w[0]);
        }
        assert_eq!(s.timestep_at_fraction(0.7), 35);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(NoiseSchedule::from_alpha_bar(vec![0.9, 0.5]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 1.0]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.0]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0]).is_err());
    }

    fn scalar(v: f64) -> LatentField {
        LatentField::new(1, 1, 1, vec![v], 0).unwrap()
    }

    #[test]
    fn start_of_schedule_is_identity() {
        let s = NoiseSchedule::cosine(50).unwrap();
        let z = forward_noise(&scalar(1.5), 0, &scalar(-3.0), &s).unwrap();
        assert_eq!(z.values(), &[1.5]);
    }

    #[test]
    fn zero_signal_is_scaled_noise() {
        let s = NoiseSchedule::cosine(50).unwrap();
        let z = forward_noise(&scalar(0.0), 20, &scalar(2.0), &s).unwrap();
        let ab = s.alpha_bar(20).unwrap();
        assert_eq!(z.values()[0], libm::sqrt(1.0 - ab) * 2.0);
        assert_eq!(z.timestep(), 20);
    }

    #[test]
    fn quarter_alpha_bar_arithmetic() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.25]).unwrap();
        let z = forward_noise(&scalar(2.0), 1, &scalar(4.0), &s).unwrap();
        assert!((z.values()[0] - (1.0 + 4.0 * libm::sqrt(0.75))).abs() < 1e-12);
        assert!((z.values()[0] - 4.4641).abs() < 1e-4);
    }

    #[test]
    fn linear_in_signal_and_noise() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let shape = FieldShape::new(2, 3, 3);
        let a = LatentField::from_fn(shape, 0, |c, x, y| (c + x * 2 + y) as f64 * 0.1);
        let e = LatentField::from_fn(shape, 0, |c, x, y| (c * 3 + x + y * 5) as f64 * -0.2);
        let za = forward_noise(&a, 4, &LatentField::zeros(shape, 0), &s).unwrap();
        let ze = forward_noise(&LatentField::zeros(shape, 0), 4, &e, &s).unwrap();
        let both = forward_noise(&a, 4, &e, &s).unwrap();
        for i in 0..shape.len() {
            assert_eq!(both.values()[i], za.values()[i] + ze.values()[i]);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let a = LatentField::zeros(FieldShape::new(1, 2, 2), 0);
        let b = LatentField::zeros(FieldShape::new(1, 2, 3), 0);
        assert!(matches!(
            forward_noise(&a, 1, &b, &s),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
