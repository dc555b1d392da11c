use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fields::resample::{upsample_strided, upsample_strided_adjoint};
use crate::fields::{FeatureField, LatentField};
use crate::math;

/// Sizes of a readout head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReadoutShape {
    /// Number of tapped feature layers.
    pub layers: usize,
    /// Channels of every tapped layer.
    pub in_channels: usize,
    /// Common channel width after the bottlenecks.
    pub width: usize,
    /// Dimension of the sinusoidal timestep encoding (even).
    pub time_dim: usize,
}

impl ReadoutShape {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.in_channels == 0 || self.width == 0 {
            return Err(Error::Configuration(
                "readout layers, channels and width must be positive".into(),
            ));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Configuration(
                "readout time_dim must be a positive even number".into(),
            ));
        }
        Ok(())
    }
}

/// Learnable parameters of a [`ReadoutHead`]; also used for their gradients.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReadoutParams {
    /// Per layer, a `width × in_channels` row-major matrix.
    pub bottlenecks: Vec<Vec<f64>>,
    /// Per layer, a `width × time_dim` row-major projection of the timestep encoding.
    pub time_projections: Vec<Vec<f64>>,
    /// One weight per layer for the final sum.
    pub aggregation: Vec<f64>,
}

impl ReadoutParams {
    pub fn zeros(shape: &ReadoutShape) -> Self {
        Self {
            bottlenecks: vec![vec![0.0; shape.width * shape.in_channels]; shape.layers],
            time_projections: vec![vec![0.0; shape.width * shape.time_dim]; shape.layers],
            aggregation: vec![0.0; shape.layers],
        }
    }

    pub fn len(&self) -> usize {
        self.bottlenecks.iter().map(Vec::len).sum::<usize>()
            + self.time_projections.iter().map(Vec::len).sum::<usize>()
            + self.aggregation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slots(&self) -> impl Iterator<Item = &f64> {
        self.bottlenecks
            .iter()
            .flatten()
            .chain(self.time_projections.iter().flatten())
            .chain(self.aggregation.iter())
    }

    fn slots_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.bottlenecks
            .iter_mut()
            .flatten()
            .chain(self.time_projections.iter_mut().flatten())
            .chain(self.aggregation.iter_mut())
    }

    /// All parameters in a fixed order: bottlenecks, projections, weights.
    pub fn flatten(&self) -> Vec<f64> {
        self.slots().copied().collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape(
                format!("{} parameters", self.len()),
                format!("{}", flat.len()),
            ));
        }
        for (slot, v) in self.slots_mut().zip(flat) {
            *slot = *v;
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ReadoutParams, scale: f64) {
        for (a, b) in self.slots_mut().zip(other.slots()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.slots_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.slots().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.slots().map(|v| v * v).sum())
    }
}

/// Sinusoidal encoding of a timestep: `dim/2` sines followed by `dim/2`
/// cosines at geometrically spaced frequencies.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = math::powf(10_000.0, -(k as f64) / half as f64);
        let arg = t as f64 * freq;
        out[k] = math::sin(arg);
        out[half + k] = math::cos(arg);
    }
    out
}

/// Aggregation head: each feature layer goes through a linear bottleneck to
/// a common width, gets a projected timestep encoding added, is upsampled to
/// full resolution, and the layers are summed with learned weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReadoutHead {
    shape: ReadoutShape,
    params: ReadoutParams,
    margin: f64,
}

/// Per-layer upsampled bottleneck outputs kept from the forward pass.
struct ForwardCache {
    upsampled: Vec<Vec<f64>>,
}

impl ReadoutHead {
    pub fn new(shape: ReadoutShape, params: ReadoutParams, margin: f64) -> Result<Self> {
        shape.validate()?;
        if !(margin > 0.0) || !margin.is_finite() {
            return Err(Error::Configuration(
                "triplet margin must be positive".into(),
            ));
        }
        let zeros = ReadoutParams::zeros(&shape);
        let layout_ok = params.bottlenecks.len() == shape.layers
            && params.time_projections.len() == shape.layers
            && params.aggregation.len() == shape.layers
            && params
                .bottlenecks
                .iter()
                .all(|b| b.len() == zeros.bottlenecks[0].len())
            && params
                .time_projections
                .iter()
                .all(|p| p.len() == zeros.time_projections[0].len());
        if !layout_ok {
            return Err(Error::Configuration(
                "readout parameters do not match the head shape".into(),
            ));
        }
        if !params.is_finite() {
            return Err(Error::Configuration(
                "readout parameters must be finite".into(),
            ));
        }
        Ok(Self {
            shape,
            params,
            margin,
        })
    }

    /// Random initialization: bottlenecks ~ N(0, 1/in_channels), timestep
    /// projections ~ N(0, 1), aggregation weights 1/layers.
    pub fn random<R: Rng + ?Sized>(shape: ReadoutShape, margin: f64, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut params = ReadoutParams::zeros(&shape);
        let bscale = 1.0 / math::sqrt(shape.in_channels as f64);
        for b in params.bottlenecks.iter_mut() {
            for v in b.iter_mut() {
                *v = bscale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for p in params.time_projections.iter_mut() {
            for v in p.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
        }
        params
            .aggregation
            .iter_mut()
            .for_each(|w| *w = 1.0 / shape.layers as f64);
        Self::new(shape, params, margin)
    }

    /// Head that copies the first `min(width, in_channels)` channels through
    /// every bottleneck, with no timestep term.
    pub fn identity(shape: ReadoutShape, aggregation: Vec<f64>, margin: f64) -> Result<Self> {
        let mut params = ReadoutParams::zeros(&shape);
        for b in params.bottlenecks.iter_mut() {
            for e in 0..shape.width.min(shape.in_channels) {
                b[e * shape.in_channels + e] = 1.0;
            }
        }
        params.aggregation = aggregation;
        Self::new(shape, params, margin)
    }

    pub fn shape(&self) -> &ReadoutShape {
        &self.shape
    }

    pub fn params(&self) -> &ReadoutParams {
        &self.params
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn set_params(&mut self, params: ReadoutParams) -> Result<()> {
        *self = Self::new(self.shape, params, self.margin)?;
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut ReadoutParams {
        &mut self.params
    }

    fn check_features(&self, features: &FeatureField) -> Result<()> {
        if features.num_layers() != self.shape.layers {
            return Err(Error::Configuration(format!(
                "readout head expects {} feature layers, got {}",
                self.shape.layers,
                features.num_layers()
            )));
        }
        if let Some(bad) = features
            .layers()
            .iter()
            .find(|l| l.channels() != self.shape.in_channels)
        {
            return Err(Error::Configuration(format!(
                "readout head expects {} channels per layer, got {}",
                self.shape.in_channels,
                bad.channels()
            )));
        }
        Ok(())
    }

    /// `width × time_dim` projection applied to the encoding of `t`.
    fn time_bias(&self, layer: usize, encoding: &[f64]) -> Vec<f64> {
        let td = self.shape.time_dim;
        let proj = &self.params.time_projections[layer];
        (0..self.shape.width)
            .map(|e| {
                proj[e * td..(e + 1) * td]
                    .iter()
                    .zip(encoding)
                    .map(|(p, x)| p * x)
                    .sum()
            })
            .collect()
    }

    fn forward_cached(
        &self,
        features: &FeatureField,
        t: usize,
    ) -> Result<(LatentField, ForwardCache)> {
        self.check_features(features)?;
        let src = features.source();
        let (h, w) = (src.height, src.width);
        let (width, cin) = (self.shape.width, self.shape.in_channels);
        let encoding = timestep_embedding(t, self.shape.time_dim);
        let mut out = vec![0.0; width * h * w];
        let mut cache = ForwardCache {
            upsampled: Vec::with_capacity(self.shape.layers),
        };
        for (l, layer) in features.layers().iter().enumerate() {
            let n = layer.height() * layer.width();
            let mat = &self.params.bottlenecks[l];
            let bias = self.time_bias(l, &encoding);
            let mut bott = vec![0.0; width * n];
            for e in 0..width {
                let row = &mut bott[e * n..(e + 1) * n];
                row.iter_mut().for_each(|v| *v = bias[e]);
                for c in 0..cin {
                    let m = mat[e * cin + c];
                    if m == 0.0 {
                        continue;
                    }
                    for (r, f) in row.iter_mut().zip(layer.plane(c)) {
                        *r += m * f;
                    }
                }
            }
            let stride = features.strides()[l];
            let mut up = Vec::with_capacity(width * h * w);
            for e in 0..width {
                up.extend(upsample_strided(
                    &bott[e * n..(e + 1) * n],
                    layer.height(),
                    layer.width(),
                    stride,
                    h,
                    w,
                ));
            }
            let weight = self.params.aggregation[l];
            for (o, u) in out.iter_mut().zip(&up) {
                *o += weight * u;
            }
            cache.upsampled.push(up);
        }
        let embedding = LatentField::new(width, h, w, out, t)?;
        Ok((embedding, cache))
    }

    /// Embedding grid (`width × H × W`) for features taken at timestep `t`.
    pub fn forward(&self, features: &FeatureField, t: usize) -> Result<LatentField> {
        Ok(self.forward_cached(features, t)?.0)
    }

    /// Back-propagates `grad` (d loss / d embedding) into the head
    /// parameters and, if asked, into the features.
    pub fn backward(
        &self,
        features: &FeatureField,
        t: usize,
        grad: &LatentField,
        want_features: bool,
    ) -> Result<(ReadoutParams, Option<FeatureField>)> {
        let (embedding, cache) = self.forward_cached(features, t)?;
        embedding.ensure_same_shape(grad)?;
        let src = features.source();
        let (h, w) = (src.height, src.width);
        let (width, cin, td) = (
            self.shape.width,
            self.shape.in_channels,
            self.shape.time_dim,
        );
        let encoding = timestep_embedding(t, td);
        let mut pgrad = ReadoutParams::zeros(&self.shape);
        let mut fgrad = want_features.then(|| features.zeros_like());
        let g = grad.values();

        for (l, layer) in features.layers().iter().enumerate() {
            let n = layer.height() * layer.width();
            let stride = features.strides()[l];
            let weight = self.params.aggregation[l];
            pgrad.aggregation[l] = g.iter().zip(&cache.upsampled[l]).map(|(a, b)| a * b).sum();

            // d loss / d bottleneck output, at layer resolution.
            let mut gb = Vec::with_capacity(width * n);
            for e in 0..width {
                let plane = &g[e * h * w..(e + 1) * h * w];
                let mut back =
                    upsample_strided_adjoint(plane, layer.height(), layer.width(), stride, h, w);
                back.iter_mut().for_each(|v| *v *= weight);
                gb.extend(back);
            }

            let mat = &self.params.bottlenecks[l];
            for e in 0..width {
                let ge = &gb[e * n..(e + 1) * n];
                let total: f64 = ge.iter().sum();
                for (g, &enc) in pgrad.time_projections[l][e * td..(e + 1) * td]
                    .iter_mut()
                    .zip(&encoding)
                {
                    *g = total * enc;
                }
                for c in 0..cin {
                    pgrad.bottlenecks[l][e * cin + c] =
                        ge.iter().zip(layer.plane(c)).map(|(a, b)| a * b).sum();
                }
            }
            if let Some(fg) = fgrad.as_mut() {
                let target = &mut fg.layers_mut()[l];
                for c in 0..cin {
                    let plane = target.plane_mut(c);
                    for e in 0..width {
                        let m = mat[e * cin + c];
                        if m == 0.0 {
                            continue;
                        }
                        for (p, v) in plane.iter_mut().zip(&gb[e * n..(e + 1) * n]) {
                            *p += m * v;
                        }
                    }
                }
            }
        }
        Ok((pgrad, fgrad))
    }
}
