//! Training forkable small networks and measuring linear mode connectivity
//! between the resulting sibling solutions.
//!
//! - [`network`]: dense/convolutional nets with gradients and exact
//!   Hessian-vector products.
//! - [`train`]: deterministic SGD and the parent → fork → children protocol.
//! - [`connectivity`]: barrier curves, second-order barrier predictions,
//!   layerwise and cross-block decompositions, sibling geometry.
//! - [`toyscape`]: 1-D product-of-quadratics landscapes.
//! - [`harness`]: JSON experiment configs, run orchestration and CSV/SVG export.

pub mod checkpoint;
pub mod connectivity;
pub mod data;
pub mod error;
pub mod harness;
pub mod hashing;
pub mod network;
pub mod objective;
pub mod params;
pub mod scalar;
pub mod toyscape;
pub mod train;

pub use data::{load_dataset, DatasetDescriptor, DatasetSlice, DatasetSource, Labels};
pub use error::{Error, Result};
pub use network::{Activation, LayerSpec, LossKind, Network, NetworkSpec};
pub use objective::{DiagonalQuadratic, NetObjective, Objective};
pub use params::{mask_apply, LayerLayout, LayerMask, ParamVector, Segment};
pub use scalar::{Dual, Scalar};
