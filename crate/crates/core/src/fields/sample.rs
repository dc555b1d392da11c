use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::math;

/// The four cells and weights of one bilinear lookup.
///
/// `weight` gives the value as a linear function of the cells; `d_dx` and
/// `d_dy` give its partial derivatives with respect to the sample position.
/// A coordinate clamped to the border has zero positional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub d_dx: [f64; 4],
    pub d_dy: [f64; 4],
}

impl BilinearTap {
    pub fn apply(&self, plane: &[f64]) -> f64 {
        self.index
            .iter()
            .zip(&self.weight)
            .map(|(&i, &w)| w * plane[i])
            .sum()
    }

    /// Positional gradient `(d/dx, d/dy)` of the sampled value.
    pub fn position_gradient(&self, plane: &[f64]) -> Vec2 {
        let mut g = Vec2::ZERO;
        for k in 0..4 {
            let v = plane[self.index[k]];
            g.x += self.d_dx[k] * v;
            g.y += self.d_dy[k] * v;
        }
        g
    }

    /// Adjoint of [`BilinearTap::apply`]: adds `scale * weight` to each cell.
    pub fn scatter(&self, plane: &mut [f64], scale: f64) {
        for k in 0..4 {
            plane[self.index[k]] += scale * self.weight[k];
        }
    }
}

/// Bilinear lookup into a row-major `height × width` plane. The point is
/// clamped to `[0, width-1] × [0, height-1]` first.
pub fn bilinear_tap(height: usize, width: usize, point: Vec2) -> Result<BilinearTap> {
    if !point.is_finite() {
        return Err(Error::invalid("sample point must be finite"));
    }
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    let x = point.x.clamp(0.0, max_x);
    let y = point.y.clamp(0.0, max_y);
    let x_free = point.x >= 0.0 && point.x <= max_x;
    let y_free = point.y >= 0.0 && point.y <= max_y;

    let x0 = math::floor(x) as usize;
    let y0 = math::floor(y) as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let gx = 1.0 - fx;
    let gy = 1.0 - fy;

    let index = [
        y0 * width + x0,
        y0 * width + x1,
        y1 * width + x0,
        y1 * width + x1,
    ];
    let weight = [gx * gy, fx * gy, gx * fy, fx * fy];
    // One-sided at the far border where x1 == x0: the derivative vanishes.
    let sx = if x_free && x1 != x0 { 1.0 } else { 0.0 };
    let sy = if y_free && y1 != y0 { 1.0 } else { 0.0 };
    let d_dx = [-gy * sx, gy * sx, -fy * sx, fy * sx];
    let d_dy = [-gx * sy, -fx * sy, gx * sy, fx * sy];
    Ok(BilinearTap {
        index,
        weight,
        d_dx,
        d_dy,
    })
}
