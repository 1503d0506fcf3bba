use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::params::{lerp, ParamVector};

/// Default number of α grid points. Odd, so α = 1/2 lies on the grid.
pub const DEFAULT_GRID: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Loss,
    ErrorRate,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Loss => "loss",
            MetricKind::ErrorRate => "error_rate",
        }
    }
}

/// `n` evenly spaced points `i / (n - 1)`; exact 0, 1 and (for odd `n`) 1/2.
pub fn alpha_grid(n: usize) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::Precondition(format!("grid needs at least 3 points, got {n}")));
    }
    let last = (n - 1) as f64;
    Ok((0..n).map(|i| i as f64 / last).collect())
}

pub(crate) fn check_grid(alphas: &[f64]) -> Result<()> {
    let ok = alphas.len() >= 2
        && alphas.first() == Some(&0.0)
        && alphas.last() == Some(&1.0)
        && alphas.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition(
            "alpha grid must be strictly increasing from 0 to 1".into(),
        ))
    }
}

/// Short id for a parameter vector in curve provenance.
pub fn checkpoint_id(theta: &ParamVector) -> String {
    theta.content_hash()[..16].to_string()
}

pub(crate) fn eval_metric<O: Objective + ?Sized>(
    obj: &O,
    theta: &ParamVector,
    metric: MetricKind,
    alpha: f64,
) -> Result<f64> {
    let value = match metric {
        MetricKind::Loss => obj.loss(theta),
        MetricKind::ErrorRate => obj.error_rate(theta),
    };
    match value {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::NonFiniteActivation { .. }) => Err(Error::NonFiniteMetric {
            metric: metric.as_str(),
            alpha,
        }),
        Err(e) => Err(e),
    }
}

/// Metric along the straight segment `(1 − α)θ₁ + αθ₂`, minus the linear
/// interpolation of the endpoint metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierCurve {
    pub alphas: Vec<f64>,
    pub segment_values: Vec<f64>,
    pub barrier: Vec<f64>,
    pub metric_kind: MetricKind,
    pub endpoints: (String, String),
    pub endpoint_values: (f64, f64),
    pub data_id: String,
}

impl BarrierCurve {
    /// Grid maximum of the barrier; the smallest α wins ties.
    pub fn max(&self) -> (f64, f64) {
        max_barrier(self)
    }
}

pub fn barrier_curve<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    grid_size: usize,
    metric: MetricKind,
) -> Result<BarrierCurve> {
    barrier_curve_on(obj, theta1, theta2, &alpha_grid(grid_size)?, metric)
}

/// [`barrier_curve`] on an explicit grid (strictly increasing, from 0 to 1).
/// Grid points are evaluated concurrently and assembled in grid order.
pub fn barrier_curve_on<O: Objective + ?Sized>(
    obj: &O,
    theta1: &ParamVector,
    theta2: &ParamVector,
    alphas: &[f64],
    metric: MetricKind,
) -> Result<BarrierCurve> {
    check_grid(alphas)?;
    theta1.check_same_layout(theta2)?;
    theta1.check_layout(obj.layout())?;
    let m1 = eval_metric(obj, theta1, metric, 0.0)?;
    let m2 = eval_metric(obj, theta2, metric, 1.0)?;
    let segment_values = alphas
        .par_iter()
        .map(|&a| eval_metric(obj, &theta1.lerp(theta2, a), metric, a))
        .collect::<Result<Vec<f64>>>()?;
    let barrier = alphas
        .iter()
        .zip(&segment_values)
        .map(|(&a, &v)| v - lerp(m1, m2, a))
        .collect();
    Ok(BarrierCurve {
        alphas: alphas.to_vec(),
        segment_values,
        barrier,
        metric_kind: metric,
        endpoints: (checkpoint_id(theta1), checkpoint_id(theta2)),
        endpoint_values: (m1, m2),
        data_id: obj.data_id().to_string(),
    })
}

/// `(α*, B(α*))` at the grid maximum; ties go to the smallest α.
pub fn max_barrier(curve: &BarrierCurve) -> (f64, f64) {
    argmax_first(&curve.alphas, &curve.barrier)
}

pub(crate) fn argmax_first(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mut best = 0;
    for (i, &y) in ys.iter().enumerate().skip(1) {
        if y > ys[best] {
            best = i;
        }
    }
    (xs[best], ys[best])
}
