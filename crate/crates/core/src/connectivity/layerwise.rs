//! Layerwise barriers: interpolating only a subset of layers, and the
//! block decomposition of the second-order prediction over layer pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::barrier::{check_grid, eval_metric, MetricKind};
use super::predict::{endpoint_curvatures, second_order_barrier};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::params::{lerp, LayerMask, ParamVector};

/// Actual barrier from swapping a single layer along the segment.
///
/// `θ₂→₁ = θ₁ + α·P_ℓΔ` carries layer ℓ of θ₂ into θ₁, `θ₁→₂ = θ₂ − (1−α)·P_ℓΔ`
/// carries layer ℓ of θ₁ into θ₂, and
/// `B_ℓ(α) = (1−α)ℒ(θ₂→₁) + αℒ(θ₁→₂) − [(1−α)ℒ(θ₁) + αℒ(θ₂)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerwiseCurve {
    pub layer: String,
    pub alphas: Vec<f64>,
    pub loss_2to1: Vec<f64>,
    pub loss_1to2: Vec<f64>,
    pub barrier: Vec<f64>,
    pub endpoint_losses: (f64, f64),
}

pub fn layerwise_barrier_curve<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    layer: &str,
    alphas: &[f64],
) -> Result<LayerwiseCurve> {
    check_grid(alphas)?;
    theta1.check_same_layout(theta2)?;
    theta1.check_layout(obj.layout())?;
    let mask = LayerMask::new(obj.layout().clone(), [layer])?;
    let masked = mask.apply(&theta2.sub(theta1))?;
    let l1 = eval_metric(obj, theta1, MetricKind::Loss, 0.0)?;
    let l2 = eval_metric(obj, theta2, MetricKind::Loss, 1.0)?;
    let pairs = alphas
        .par_iter()
        .map(|&a| {
            let into1 = theta1.axpy(a, &masked);
            let into2 = theta2.axpy(-(1.0 - a), &masked);
            Ok((
                eval_metric(obj, &into1, MetricKind::Loss, a)?,
                eval_metric(obj, &into2, MetricKind::Loss, a)?,
            ))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (loss_2to1, loss_1to2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let barrier = alphas
        .iter()
        .zip(loss_2to1.iter().zip(&loss_1to2))
        .map(|(&a, (&l21, &l12))| lerp(l21, l12, a) - lerp(l1, l2, a))
        .collect();
    Ok(LayerwiseCurve {
        layer: layer.to_string(),
        alphas: alphas.to_vec(),
        loss_2to1,
        loss_1to2,
        barrier,
        endpoint_losses: (l1, l2),
    })
}

/// Second-order prediction for interpolating the layers in `mask` only:
/// with `m = P Δ`, `α(1−α)/2 · (α mᵀ∇²ℒ(θ₁)m + (1−α) mᵀ∇²ℒ(θ₂)m)`.
pub fn layerwise_predicted<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    mask: &LayerMask,
    alpha: f64,
) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Precondition("layer set must not be empty".into()));
    }
    theta1.check_same_layout(theta2)?;
    let m = mask.apply(&theta2.sub(theta1))?;
    let (q1, q2) = rayon::join(
        || obj.quadratic_form(theta1, &m, &m),
        || obj.quadratic_form(theta2, &m, &m),
    );
    Ok(second_order_barrier(alpha, q1?, q2?))
}

/// Which endpoint Hessians enter the cross-block terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianWeighting {
    /// Mean of the two endpoint Hessians (the α = 1/2 weighting).
    #[default]
    EndpointAverage,
    /// Hessian at θ₁ only (aligned-curvature approximation).
    FirstEndpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBlockReport {
    pub layers: Vec<String>,
    /// `block[ℓ][ℓ′] = ⅛ ⟨P_ℓΔ, H P_ℓ′Δ⟩` with `H` per [`HessianWeighting`].
    pub block: Vec<Vec<f64>>,
    pub weighting: HessianWeighting,
    /// `‖Δ[ℓ]‖` per layer.
    pub delta_norms: Vec<f64>,
    /// Full-network prediction at α = 1/2 (computed independently of the
    /// blocks).
    pub full_predicted_half: f64,
    /// Single-layer predictions at α = 1/2 (filled by [`layer_block_report`]).
    pub per_layer_predicted: Vec<f64>,
    /// Actual single-layer barrier curves (filled by [`layer_block_report`]).
    pub per_layer_actual: Vec<LayerwiseCurve>,
}

impl LayerBlockReport {
    pub fn block_sum(&self) -> f64 {
        self.block.iter().flatten().sum()
    }

    fn index(&self, layer: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l == layer)
            .ok_or_else(|| Error::Config(format!("unknown layer `{layer}`")))
    }

    pub fn entry(&self, row: &str, col: &str) -> Result<f64> {
        Ok(self.block[self.index(row)?][self.index(col)?])
    }

    /// `Σ_{ℓ,ℓ′ ∈ set} B*_{ℓ,ℓ′}`.
    pub fn set_sum(&self, set: &[&str]) -> Result<f64> {
        let idx = set.iter().map(|l| self.index(l)).collect::<Result<Vec<_>>>()?;
        Ok(idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.block[i][j])
            .sum())
    }
}

/// Cross-block matrix of the α = 1/2 prediction. One Hessian-vector product
/// per layer and endpoint; layers are processed concurrently.
pub fn cross_block_matrix<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    weighting: HessianWeighting,
) -> Result<LayerBlockReport> {
    let (q1, q2, delta) = endpoint_curvatures(obj, theta1, theta2)?;
    let layout = obj.layout().clone();
    let layers: Vec<String> = layout.names().map(str::to_string).collect();
    let projected = layers
        .iter()
        .map(|l| LayerMask::new(layout.clone(), [l])?.apply(&delta))
        .collect::<Result<Vec<_>>>()?;
    let columns = projected
        .par_iter()
        .map(|p| match weighting {
            HessianWeighting::EndpointAverage => {
                let (h1, h2) = rayon::join(|| obj.hvp(theta1, p), || obj.hvp(theta2, p));
                Ok(h1?.add(&h2?).scale(0.5))
            }
            HessianWeighting::FirstEndpoint => obj.hvp(theta1, p),
        })
        .collect::<Result<Vec<ParamVector>>>()?;
    let block = projected
        .iter()
        .map(|row| columns.iter().map(|col| row.dot(col) / 8.0).collect())
        .collect();
    let full_predicted_half = match weighting {
        HessianWeighting::EndpointAverage => second_order_barrier(0.5, q1, q2),
        HessianWeighting::FirstEndpoint => q1 / 8.0,
    };
    Ok(LayerBlockReport {
        delta_norms: projected.iter().map(ParamVector::norm).collect(),
        layers,
        block,
        weighting,
        full_predicted_half,
        per_layer_predicted: Vec::new(),
        per_layer_actual: Vec::new(),
    })
}

/// [`cross_block_matrix`] plus actual and predicted single-layer barriers.
pub fn layer_block_report<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    alphas: &[f64],
    weighting: HessianWeighting,
) -> Result<LayerBlockReport> {
    let mut report = cross_block_matrix(obj, theta1, theta2, weighting)?;
    let layout = obj.layout().clone();
    report.per_layer_predicted = report
        .layers
        .iter()
        .map(|l| layerwise_predicted(obj, theta1, theta2, &LayerMask::new(layout.clone(), [l])?, 0.5))
        .collect::<Result<_>>()?;
    report.per_layer_actual = report
        .layers
        .iter()
        .map(|l| layerwise_barrier_curve(obj, theta1, theta2, l, alphas))
        .collect::<Result<_>>()?;
    Ok(report)
}
