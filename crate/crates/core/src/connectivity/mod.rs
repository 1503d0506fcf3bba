//! Linear mode connectivity analysis between two solutions θ₁, θ₂.
//!
//! - [`barrier`]: exact barrier curves along the connecting segment.
//! - [`predict`]: second-order prediction from endpoint Hessian quadratic
//!   forms along `Δ = θ₂ − θ₁`.
//! - [`layerwise`]: single-layer interpolation barriers and the layer-pair
//!   block decomposition of the prediction.
//! - [`geometry`]: sibling angles, solution-plane cosines and distances.

pub mod barrier;
pub mod geometry;
pub mod layerwise;
pub mod predict;

pub use barrier::{alpha_grid, barrier_curve, barrier_curve_on, max_barrier, BarrierCurve, MetricKind, DEFAULT_GRID};
pub use geometry::{cosine, sibling_angle, sibling_geometry, AngleBase, GeometryReport};
pub use layerwise::{
    cross_block_matrix, layer_block_report, layerwise_barrier_curve, layerwise_predicted, HessianWeighting,
    LayerBlockReport, LayerwiseCurve,
};
pub use predict::{
    predicted_barrier, predicted_barrier_simplified, predicted_barrier_with, second_order_barrier, PredictedBarrier,
    StationarityWarning, DEFAULT_STATIONARITY_THRESHOLD,
};
