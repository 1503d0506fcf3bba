//! Flat parameter vectors and the layer segment map that gives them structure.
//!
//! Every geometric and barrier quantity in this crate is computed on a
//! [`ParamVector`]: one contiguous `f64` buffer plus a shared [`LayerLayout`]
//! describing which index range belongs to which named layer.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Ordered partition of `[0, total_params)` into named layer segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    segments: Vec<Segment>,
    total_params: usize,
}

impl LayerLayout {
    /// Builds a layout from `(name, len)` pairs laid out back to back.
    pub fn from_lengths<S: Into<String>>(parts: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut start = 0;
        let segments = parts
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment {
                    name: name.into(),
                    start,
                    len,
                };
                start += len;
                seg
            })
            .collect();
        Self::new(segments)
    }

    /// Validates that `segments` partition `[0, total)` with unique names.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0;
        let mut names = BTreeSet::new();
        for seg in &segments {
            if seg.start != cursor {
                return Err(Error::Layout(format!(
                    "segment `{}` starts at {} but previous segment ended at {cursor}",
                    seg.name, seg.start
                )));
            }
            if !names.insert(seg.name.as_str()) {
                return Err(Error::Layout(format!("duplicate layer name `{}`", seg.name)));
            }
            cursor += seg.len;
        }
        Ok(Self {
            segments,
            total_params: cursor,
        })
    }

    pub fn total_params(&self) -> usize {
        self.total_params
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.name.as_str())
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// A flat parameter vector tied to a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<LayerLayout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<LayerLayout>) -> Result<Self> {
        if values.len() != layout.total_params() {
            return Err(Error::Layout(format!(
                "vector has {} entries but layout expects {}",
                values.len(),
                layout.total_params()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Layout(format!("entry {i} is not finite")));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<LayerLayout>) -> Self {
        Self {
            values: vec![0.0; layout.total_params()],
            layout,
        }
    }

    /// Wraps values already known to be finite (results of finite arithmetic
    /// on finite inputs are re-checked in debug builds).
    pub(crate) fn from_raw(values: Vec<f64>, layout: Arc<LayerLayout>) -> Self {
        debug_assert_eq!(values.len(), layout.total_params());
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout {
            Ok(())
        } else {
            Err(Error::Layout("parameter vectors have different layouts".into()))
        }
    }

    pub fn check_layout(&self, layout: &LayerLayout) -> Result<()> {
        if *self.layout == *layout {
            Ok(())
        } else {
            Err(Error::Layout(
                "parameter vector layout does not match the network".into(),
            ))
        }
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self::from_raw(values, self.layout.clone())
    }

    pub fn add(&self, other: &ParamVector) -> ParamVector {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self::from_raw(values, self.layout.clone())
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        Self::from_raw(self.values.iter().map(|v| v * factor).collect(), self.layout.clone())
    }

    /// `self + factor * direction`.
    pub fn axpy(&self, factor: f64, direction: &ParamVector) -> ParamVector {
        let values = self
            .values
            .iter()
            .zip(&direction.values)
            .map(|(a, d)| a + factor * d)
            .collect();
        Self::from_raw(values, self.layout.clone())
    }

    /// Point `(1 - alpha) * self + alpha * other` on the connecting segment.
    pub fn lerp(&self, other: &ParamVector, alpha: f64) -> ParamVector {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| lerp(a, b, alpha))
            .collect();
        Self::from_raw(values, self.layout.clone())
    }

    /// SHA-256 over the little-endian bytes of the values, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Diagonal 0/1 projection onto a set of layers.
#[derive(Clone, Debug)]
pub struct LayerMask {
    layer_set: BTreeSet<String>,
    layout: Arc<LayerLayout>,
}

impl LayerMask {
    pub fn new<S: AsRef<str>>(layout: Arc<LayerLayout>, layers: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut layer_set = BTreeSet::new();
        for name in layers {
            let name = name.as_ref();
            if layout.segment(name).is_none() {
                return Err(Error::Config(format!("unknown layer `{name}`")));
            }
            layer_set.insert(name.to_string());
        }
        Ok(Self { layer_set, layout })
    }

    pub fn all(layout: Arc<LayerLayout>) -> Self {
        let layer_set = layout.names().map(str::to_string).collect();
        Self { layer_set, layout }
    }

    pub fn layer_set(&self) -> &BTreeSet<String> {
        &self.layer_set
    }

    pub fn is_empty(&self) -> bool {
        self.layer_set.is_empty()
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    /// Zeroes every entry outside the masked layers.
    pub fn apply(&self, v: &ParamVector) -> Result<ParamVector> {
        v.check_layout(&self.layout)?;
        let mut out = vec![0.0; v.len()];
        for seg in self.layout.segments() {
            if self.layer_set.contains(&seg.name) {
                out[seg.range()].copy_from_slice(&v.values()[seg.range()]);
            }
        }
        Ok(ParamVector::from_raw(out, v.layout().clone()))
    }
}

/// Free-function form of [`LayerMask::apply`].
pub fn mask_apply(mask: &LayerMask, v: &ParamVector) -> Result<ParamVector> {
    mask.apply(v)
}

/// `(1 − α)a + αb`, returning `a` exactly when `a == b`.
pub(crate) fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    if a == b {
        a
    } else {
        (1.0 - alpha) * a + alpha * b
    }
}
