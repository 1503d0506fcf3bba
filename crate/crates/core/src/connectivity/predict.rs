use serde::{Deserialize, Serialize};

use super::barrier::check_grid;
use crate::error::Result;
use crate::objective::Objective;
use crate::params::ParamVector;

/// Endpoint gradient norm above which the second-order prediction is
/// flagged: the expansion drops first-order terms, which vanish only at
/// stationary points.
pub const DEFAULT_STATIONARITY_THRESHOLD: f64 = 1e-2;

/// Second-order barrier value at `alpha` given the endpoint curvatures along
/// the sibling difference, `q₁ = Δᵀ∇²ℒ(θ₁)Δ` and `q₂ = Δᵀ∇²ℒ(θ₂)Δ`.
///
/// The expansion around θ₁ is weighted by `1 − α` and the one around θ₂ by
/// `α`, which gives `α(1 − α)/2 · (α q₁ + (1 − α) q₂)`.
pub fn second_order_barrier(alpha: f64, q1: f64, q2: f64) -> f64 {
    alpha * (1.0 - alpha) / 2.0 * (alpha * q1 + (1.0 - alpha) * q2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityWarning {
    /// 1 or 2.
    pub endpoint: u8,
    pub grad_norm: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedBarrier {
    pub alphas: Vec<f64>,
    pub predicted: Vec<f64>,
    pub q1: f64,
    pub q2: f64,
    /// `‖θ₂ − θ₁‖`.
    pub distance: f64,
    pub grad_norms: [f64; 2],
    pub warnings: Vec<StationarityWarning>,
}

impl PredictedBarrier {
    /// Prediction at α = 1/2, independent of the grid.
    pub fn at_half(&self) -> f64 {
        second_order_barrier(0.5, self.q1, self.q2)
    }

    pub fn is_stationary(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Endpoint curvatures `(q₁, q₂)` along `Δ = θ₂ − θ₁`.
pub fn endpoint_curvatures<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
) -> Result<(f64, f64, ParamVector)> {
    theta1.check_same_layout(theta2)?;
    theta1.check_layout(obj.layout())?;
    let delta = theta2.sub(theta1);
    let (q1, q2) = rayon::join(
        || obj.quadratic_form(theta1, &delta, &delta),
        || obj.quadratic_form(theta2, &delta, &delta),
    );
    Ok((q1?, q2?, delta))
}

pub fn predicted_barrier<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    alphas: &[f64],
) -> Result<PredictedBarrier> {
    predicted_barrier_with(obj, theta1, theta2, alphas, DEFAULT_STATIONARITY_THRESHOLD)
}

pub fn predicted_barrier_with<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    alphas: &[f64],
    stationarity_threshold: f64,
) -> Result<PredictedBarrier> {
    check_grid(alphas)?;
    let (q1, q2, delta) = endpoint_curvatures(obj, theta1, theta2)?;
    let (g1, g2) = rayon::join(|| obj.gradient(theta1), || obj.gradient(theta2));
    let grad_norms = [g1?.norm(), g2?.norm()];
    let warnings = grad_norms
        .iter()
        .zip([1u8, 2])
        .filter(|(g, _)| **g > stationarity_threshold)
        .map(|(&grad_norm, endpoint)| StationarityWarning {
            endpoint,
            grad_norm,
            threshold: stationarity_threshold,
        })
        .collect();
    Ok(PredictedBarrier {
        alphas: alphas.to_vec(),
        predicted: alphas.iter().map(|&a| second_order_barrier(a, q1, q2)).collect(),
        q1,
        q2,
        distance: delta.norm(),
        grad_norms,
        warnings,
    })
}

/// Aligned-curvature form `α(1 − α)/2 · q₁` at its maximizer α = 1/2,
/// i.e. `q₁ / 8`.
pub fn predicted_barrier_simplified<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
) -> Result<f64> {
    theta1.check_same_layout(theta2)?;
    let delta = theta2.sub(theta1);
    let q1 = obj.quadratic_form(theta1, &delta, &delta)?;
    Ok(q1 / 8.0)
}
