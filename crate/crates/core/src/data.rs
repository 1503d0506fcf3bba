//! Dataset slices: synthetic generators, IDX binary files and seeded
//! stratified subsets. Every slice carries a content hash that identifies it
//! in manifests.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes { labels: Vec<usize>, num_classes: usize },
    Targets { values: Vec<f64>, dim: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { labels, .. } => labels.len(),
            Labels::Targets { values, dim } => values.len() / dim.max(&1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the network output these labels are compared against.
    pub fn output_dim(&self) -> usize {
        match self {
            Labels::Classes { num_classes, .. } => *num_classes,
            Labels::Targets { dim, .. } => *dim,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum LabelRef<'a> {
    Class(usize),
    Target(&'a [f64]),
}

/// An evaluation or training set with a stable content id.
#[derive(Clone, Debug)]
pub struct DatasetSlice {
    inputs: Vec<f64>,
    input_dim: usize,
    labels: Labels,
    id: String,
}

impl DatasetSlice {
    pub fn new(inputs: Vec<f64>, input_dim: usize, labels: Labels) -> Result<Self> {
        if input_dim == 0 || !inputs.len().is_multiple_of(input_dim) {
            return Err(Error::Config(format!(
                "{} input values do not split into rows of width {input_dim}",
                inputs.len()
            )));
        }
        let n = inputs.len() / input_dim;
        if n == 0 {
            return Err(Error::Precondition("dataset slice is empty".into()));
        }
        match &labels {
            Labels::Classes {
                labels: ls,
                num_classes,
            } => {
                if ls.len() != n {
                    return Err(Error::Config(format!("{n} inputs but {} labels", ls.len())));
                }
                if let Some(bad) = ls.iter().find(|&&c| c >= *num_classes) {
                    return Err(Error::Config(format!("label {bad} outside 0..{num_classes}")));
                }
            }
            Labels::Targets { values, dim } => {
                if *dim == 0 || values.len() != n * dim {
                    return Err(Error::Config(format!(
                        "{n} inputs but {} target values of width {dim}",
                        values.len()
                    )));
                }
            }
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("dataset contains non-finite inputs".into()));
        }
        let id = content_id(&inputs, input_dim, &labels);
        Ok(Self {
            inputs,
            input_dim,
            labels,
            id,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Row-major inputs, `len() × input_dim()`.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> LabelRef<'_> {
        match &self.labels {
            Labels::Classes { labels, .. } => LabelRef::Class(labels[i]),
            Labels::Targets { values, dim } => LabelRef::Target(&values[i * dim..(i + 1) * dim]),
        }
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Rows at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Bounds(format!("row {bad} of {}", self.len())));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        let labels = match &self.labels {
            Labels::Classes { labels, num_classes } => Labels::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Labels::Targets { values, dim } => Labels::Targets {
                values: indices
                    .iter()
                    .flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
                dim: *dim,
            },
        };
        Self::new(inputs, self.input_dim, labels)
    }

    /// Seeded subset with an equal number of rows per class (the first
    /// `size % classes` classes get one extra). Original row order is kept.
    pub fn stratified_subset(&self, size: usize, seed: u64) -> Result<Self> {
        let Labels::Classes { labels, num_classes } = &self.labels else {
            return Err(Error::Config("stratified subsets need class labels".into()));
        };
        if size > self.len() {
            return Err(Error::Bounds(format!(
                "subset of {size} requested from {} rows",
                self.len()
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); *num_classes];
        for (i, &c) in labels.iter().enumerate() {
            by_class[c].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = size / num_classes;
        let extra = size % num_classes;
        let mut chosen = Vec::with_capacity(size);
        for (c, rows) in by_class.iter_mut().enumerate() {
            let quota = base + usize::from(c < extra);
            if quota > rows.len() {
                return Err(Error::Bounds(format!(
                    "class {c} has {} rows, subset needs {quota}",
                    rows.len()
                )));
            }
            rows.shuffle(&mut rng);
            chosen.extend_from_slice(&rows[..quota]);
        }
        chosen.sort_unstable();
        self.select(&chosen)
    }
}

fn content_id(inputs: &[f64], input_dim: usize, labels: &Labels) -> String {
    let mut h = Sha256::new();
    h.update(b"lmc-dataset-v1");
    h.update((input_dim as u64).to_le_bytes());
    h.update((inputs.len() as u64).to_le_bytes());
    for v in inputs {
        h.update(v.to_le_bytes());
    }
    match labels {
        Labels::Classes { labels, num_classes } => {
            h.update(b"classes");
            h.update((*num_classes as u64).to_le_bytes());
            for &c in labels {
                h.update((c as u64).to_le_bytes());
            }
        }
        Labels::Targets { values, dim } => {
            h.update(b"targets");
            h.update((*dim as u64).to_le_bytes());
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Where a dataset slice comes from. Serialized inside experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Two isotropic unit-variance Gaussians whose means sit at
    /// `±separation / 2` along the first axis. Rows alternate classes.
    TwoGaussians {
        n: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    /// Interleaved spiral arms, one class per arm.
    Spiral {
        n: usize,
        classes: usize,
        #[serde(default = "default_turns")]
        turns: f64,
        noise: f64,
        seed: u64,
    },
    /// IDX-format image and label files (unsigned byte payloads).
    Idx { images: PathBuf, labels: PathBuf },
}

fn default_turns() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub source: DatasetSource,
    #[serde(default)]
    pub subset: Option<usize>,
    #[serde(default)]
    pub subset_seed: u64,
}

pub fn load_dataset(desc: &DatasetDescriptor) -> Result<DatasetSlice> {
    let full = match &desc.source {
        DatasetSource::TwoGaussians {
            n,
            dim,
            separation,
            seed,
        } => two_gaussians(*n, *dim, *separation, *seed)?,
        DatasetSource::Spiral {
            n,
            classes,
            turns,
            noise,
            seed,
        } => spiral(*n, *classes, *turns, *noise, *seed)?,
        DatasetSource::Idx { images, labels } => {
            let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
            let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
            idx_dataset(&img, &lab)?
        }
    };
    match desc.subset {
        Some(size) => full.stratified_subset(size, desc.subset_seed),
        None => Ok(full),
    }
}

pub fn two_gaussians(n: usize, dim: usize, separation: f64, seed: u64) -> Result<DatasetSlice> {
    if dim == 0 {
        return Err(Error::Config("two-Gaussians needs dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let shift = if class == 0 {
            -separation / 2.0
        } else {
            separation / 2.0
        };
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            inputs.push(if d == 0 { z + shift } else { z });
        }
        labels.push(class);
    }
    DatasetSlice::new(inputs, dim, Labels::Classes { labels, num_classes: 2 })
}

/// `classes` spiral arms in the plane. Row `i` belongs to arm `i % classes`;
/// its radius grows linearly along the arm and its angle sweeps `turns` full
/// revolutions plus Gaussian angular noise.
pub fn spiral(n: usize, classes: usize, turns: f64, noise: f64, seed: u64) -> Result<DatasetSlice> {
    if classes < 2 {
        return Err(Error::Config("spiral needs at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_arm = n.div_ceil(classes);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let k = i / classes;
        let r = (k as f64 + 0.5) / per_arm as f64;
        let z: f64 = StandardNormal.sample(&mut rng);
        let angle = 2.0 * PI * (class as f64 / classes as f64 + turns * r) + noise * z;
        inputs.push(r * angle.cos());
        inputs.push(r * angle.sin());
        labels.push(class);
    }
    DatasetSlice::new(
        inputs,
        2,
        Labels::Classes {
            labels,
            num_classes: classes,
        },
    )
}

/// A decoded IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub const IDX_UBYTE: u8 = 0x08;

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            msg: "file shorter than the 4-byte magic".into(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Parse {
            offset: 0,
            msg: format!(
                "magic must start with two zero bytes, got {:02x}{:02x}",
                bytes[0], bytes[1]
            ),
        });
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::Parse {
            offset: 2,
            msg: format!("unsupported element type 0x{:02x} (only unsigned byte)", bytes[2]),
        });
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Parse {
            offset: 3,
            msg: "zero dimensions".into(),
        });
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let off = 4 + 4 * d;
        let Some(chunk) = bytes.get(off..off + 4) else {
            return Err(Error::Parse {
                offset: bytes.len() as u64,
                msg: format!("header ends before dimension {d}"),
            });
        };
        dims.push(u32::from_be_bytes(chunk.try_into().expect("4-byte chunk")) as usize);
    }
    let header = 4 + 4 * ndims;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse {
            offset: 4,
            msg: "declared dimensions overflow".into(),
        })?;
    let payload = &bytes[header..];
    if payload.len() != count {
        return Err(Error::Parse {
            offset: (header + payload.len().min(count)) as u64,
            msg: format!("expected {count} payload bytes, found {}", payload.len()),
        });
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

/// Images `[n, rows, cols]` scaled to `[0, 1]`, labels `[n]`. Classes are
/// `0..=max_label`.
pub fn idx_dataset(images: &[u8], labels: &[u8]) -> Result<DatasetSlice> {
    let img = parse_idx(images)?;
    let lab = parse_idx(labels)?;
    if img.dims.len() != 3 {
        return Err(Error::Parse {
            offset: 3,
            msg: format!("image file must have 3 dims, has {}", img.dims.len()),
        });
    }
    if lab.dims.len() != 1 {
        return Err(Error::Parse {
            offset: 3,
            msg: format!("label file must have 1 dim, has {}", lab.dims.len()),
        });
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Config(format!(
            "{} images but {} labels",
            img.dims[0], lab.dims[0]
        )));
    }
    let pixels = img.dims[1] * img.dims[2];
    let inputs = img.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let classes: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let num_classes = classes.iter().max().map_or(1, |m| m + 1);
    DatasetSlice::new(
        inputs,
        pixels,
        Labels::Classes {
            labels: classes,
            num_classes,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic_dims: u8, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, IDX_UBYTE, magic_dims];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn two_gaussians_is_reproducible() {
        let a = two_gaussians(8, 3, 2.0, 7).unwrap();
        let b = two_gaussians(8, 3, 2.0, 7).unwrap();
        assert_eq!(a.id(), b.id());
        let c = two_gaussians(8, 3, 2.0, 8).unwrap();
        assert_ne!(a.id(), c.id());
    }

    #[test]
    fn idx_single_image() {
        let bytes = idx_bytes(3, &[1, 2, 2], &[0, 51, 102, 255]);
        assert_eq!(u32::from_be_bytes(bytes[0..4].try_into().unwrap()), 0x0000_0803);
        let arr = parse_idx(&bytes).unwrap();
        assert_eq!(arr.dims, vec![1, 2, 2]);
        let labels = idx_bytes(1, &[1], &[3]);
        let ds = idx_dataset(&bytes, &labels).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(ds.input(0), &[0.0, 0.2, 0.4, 1.0]);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let short = idx_bytes(3, &[1, 2, 2], &[0, 1, 2]);
        match parse_idx(&short) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16 + 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_magic = vec![1, 0, 8, 1, 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bad_magic), Err(Error::Parse { offset: 0, .. })));
        let cut_header = vec![0, 0, 8, 3, 0, 0];
        assert!(matches!(parse_idx(&cut_header), Err(Error::Parse { offset: 6, .. })));
    }

    #[test]
    fn stratified_subset_is_balanced() {
        let n = 1000;
        let inputs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % 10).collect();
        let ds = DatasetSlice::new(
            inputs,
            1,
            Labels::Classes {
                labels,
                num_classes: 10,
            },
        )
        .unwrap();
        let sub = ds.stratified_subset(100, 3).unwrap();
        let Labels::Classes { labels, .. } = sub.labels() else {
            unreachable!()
        };
        let mut counts = [0; 10];
        for &c in labels {
            counts[c] += 1;
        }
        assert_eq!(counts, [10; 10]);
        assert_eq!(sub.id(), ds.stratified_subset(100, 3).unwrap().id());
        assert!(matches!(ds.stratified_subset(1001, 3), Err(Error::Bounds(_))));
    }

    #[test]
    fn spiral_shape() {
        let ds = spiral(30, 3, 1.0, 0.1, 1).unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.labels().output_dim(), 3);
    }

    #[test]
    fn empty_slice_rejected() {
        let r = DatasetSlice::new(
            vec![],
            2,
            Labels::Classes {
                labels: vec![],
                num_classes: 2,
            },
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
