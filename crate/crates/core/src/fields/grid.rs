use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::sample::bilinear_tap;
use crate::geometry::Vec2;

/// Single-channel `height × width` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScalarGrid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("grid dimensions must be at least 1x1"));
        }
        if values.len() != height * width {
            return Err(Error::shape(
                format!("{} values", height * width),
                format!("{} values", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(
            height > 0 && width > 0,
            "grid dimensions must be at least 1x1"
        );
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(
            height > 0 && width > 0,
            "grid dimensions must be at least 1x1"
        );
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.values[y * self.width + x] = value;
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Bilinear interpolation at `point`; coordinates outside the grid are
    /// clamped to the valid rectangle.
    pub fn sample(&self, point: Vec2) -> Result<f64> {
        Ok(bilinear_tap(self.height, self.width, point)?.apply(&self.values))
    }
}

/// `channels × height × width` latent at a diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
    timestep: usize,
}

/// Dimensions of a [`LatentField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FieldShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FieldShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

impl core::fmt::Display for FieldShape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl LatentField {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
        timestep: usize,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("latent dimensions must be positive"));
        }
        if values.len() != channels * height * width {
            return Err(Error::shape(
                format!("{} values", channels * height * width),
                format!("{} values", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent values must be finite"));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
            timestep,
        })
    }

    pub fn zeros(shape: FieldShape, timestep: usize) -> Self {
        assert!(!shape.is_empty(), "latent dimensions must be positive");
        Self {
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            values: vec![0.0; shape.len()],
            timestep,
        }
    }

    pub fn from_fn(
        shape: FieldShape,
        timestep: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(shape, timestep);
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    out.values[(c * shape.height + y) * shape.width + x] = f(c, x, y);
                }
            }
        }
        out
    }

    pub fn shape(&self) -> FieldShape {
        FieldShape::new(self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn with_timestep(mut self, timestep: usize) -> Self {
        self.timestep = timestep;
        self
    }

    pub fn set_timestep(&mut self, timestep: usize) {
        self.timestep = timestep;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, value: f64) {
        self.values[(c * self.height + y) * self.width + x] = value;
    }

    /// One channel copied out as a scalar grid.
    pub fn channel_grid(&self, c: usize) -> ScalarGrid2D {
        ScalarGrid2D {
            height: self.height,
            width: self.width,
            values: self.plane(c).to_vec(),
        }
    }

    pub fn ensure_same_shape(&self, other: &LatentField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{}", self.shape()),
                format!("{}", other.shape()),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &LatentField, scale: f64) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn dot(&self, other: &LatentField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn mean_abs_diff(&self, other: &LatentField) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let total: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.values.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &LatentField) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Multi-resolution features computed from one latent.
///
/// Layer `l` has stride `strides[l]`: the full-resolution position `p` maps
/// to `p / stride` inside that layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    layers: Vec<LatentField>,
    strides: Vec<usize>,
    source: FieldShape,
    timestep: usize,
}

impl FeatureField {
    pub fn new(
        layers: Vec<LatentField>,
        strides: Vec<usize>,
        source: FieldShape,
        timestep: usize,
    ) -> Result<Self> {
        if layers.is_empty() || layers.len() != strides.len() {
            return Err(Error::invalid(
                "feature field needs one stride per layer and at least one layer",
            ));
        }
        for pair in layers.windows(2) {
            if pair[1].height() > pair[0].height() || pair[1].width() > pair[0].width() {
                return Err(Error::invalid(
                    "feature layer resolutions must be non-increasing",
                ));
            }
        }
        if strides.contains(&0) {
            return Err(Error::invalid("feature strides must be positive"));
        }
        Ok(Self {
            layers,
            strides,
            source,
            timestep,
        })
    }

    /// A single full-resolution layer.
    pub fn single(layer: LatentField) -> Self {
        let source = layer.shape();
        let timestep = layer.timestep();
        Self {
            layers: vec![layer],
            strides: vec![1],
            source,
            timestep,
        }
    }

    pub fn layers(&self) -> &[LatentField] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LatentField {
        &self.layers[l]
    }

    pub fn layers_mut(&mut self) -> &mut [LatentField] {
        &mut self.layers
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Shape of the latent these features were extracted from.
    pub fn source(&self) -> FieldShape {
        self.source
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    /// Total number of channels across all layers.
    pub fn feature_dim(&self) -> usize {
        self.layers.iter().map(|l| l.channels()).sum()
    }

    /// Zero-valued field with the same layout, used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LatentField::zeros(l.shape(), l.timestep()))
                .collect(),
            strides: self.strides.clone(),
            source: self.source,
            timestep: self.timestep,
        }
    }

    /// Feature vector at a full-resolution position, every layer sampled
    /// bilinearly at `point / stride` and concatenated.
    pub fn sample_point(&self, point: Vec2, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for (layer, &stride) in self.layers.iter().zip(&self.strides) {
            let p = point * (1.0 / stride as f64);
            let tap = bilinear_tap(layer.height(), layer.width(), p)?;
            for c in 0..layer.channels() {
                out.push(tap.apply(layer.plane(c)));
            }
        }
        Ok(())
    }

    /// Adds `weights[k] * d(feature_k)` at `point` into `grad`, the adjoint
    /// of [`FeatureField::sample_point`].
    pub fn scatter_point(grad: &mut FeatureField, point: Vec2, weights: &[f64]) -> Result<()> {
        let mut k = 0;
        let strides = grad.strides.clone();
        for (layer, stride) in grad.layers.iter_mut().zip(strides) {
            let p = point * (1.0 / stride as f64);
            let tap = bilinear_tap(layer.height(), layer.width(), p)?;
            for c in 0..layer.channels() {
                tap.scatter(layer.plane_mut(c), weights[k]);
                k += 1;
            }
        }
        Ok(())
    }

    pub fn dot(&self, other: &FeatureField) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.dot(b))
            .sum()
    }
}
