//! Point and vector types shared by the mask, warp and drag modules.

use core::ops::{Add, Mul, Neg, Sub};

use crate::math;

/// Real-valued 2-D point or vector, `x` rightward, `y` downward.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        math::hypot(self.x, self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0).then(|| self * (1.0 / n))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Integer pixel coordinate, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pixel {
    pub x: i64,
    pub y: i64,
}

impl Pixel {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn inside(self, height: usize, width: usize) -> bool {
        self.x >= 0
            && self.y >= 0
            && (self.x as u64) < width as u64
            && (self.y as u64) < height as u64
    }

    pub fn to_vec2(self) -> Vec2 {
        Vec2::new(self.x as f64, self.y as f64)
    }
}

/// A handle pixel and the target it should be dragged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointPair {
    pub handle: Pixel,
    pub target: Pixel,
}

impl PointPair {
    pub const fn new(handle: Pixel, target: Pixel) -> Self {
        Self { handle, target }
    }

    pub fn inside(&self, height: usize, width: usize) -> bool {
        self.handle.inside(height, width) && self.target.inside(height, width)
    }

    pub fn is_null(&self) -> bool {
        self.handle == self.target
    }
}

/// A drag expressed in real coordinates, e.g. after rescaling to latent space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drag {
    pub handle: Vec2,
    pub target: Vec2,
}

impl Drag {
    pub const fn new(handle: Vec2, target: Vec2) -> Self {
        Self { handle, target }
    }

    pub fn vector(&self) -> Vec2 {
        self.target - self.handle
    }
}

impl From<PointPair> for Drag {
    fn from(p: PointPair) -> Self {
        Drag::new(p.handle.to_vec2(), p.target.to_vec2())
    }
}
