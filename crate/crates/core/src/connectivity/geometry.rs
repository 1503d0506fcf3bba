use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::train::ForkedRun;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleBase {
    Origin,
    ForkPoint,
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(a: &ParamVector, b: &ParamVector) -> Option<f64> {
    let (aa, bb) = (a.dot(a), b.dot(b));
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    // sqrt(x * x) == x in IEEE arithmetic, so identical vectors give exactly 1
    Some((a.dot(b) / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// Angle in degrees between `θ₁ − base` and `θ₂ − base`.
pub fn sibling_angle(theta1: &ParamVector, theta2: &ParamVector, base: &ParamVector) -> Option<f64> {
    cosine(&theta1.sub(base), &theta2.sub(base)).map(|c| c.acos().to_degrees())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub base: AngleBase,
    /// Angle at the requested base.
    pub angle: Option<f64>,
    pub angle_origin: Option<f64>,
    pub angle_fork: Option<f64>,
    /// `(child epoch, cos(θᵗ₁ − θᵗ₂, θ*₁ − θ*₂))`.
    pub plane_cosine_trace: Vec<(usize, Option<f64>)>,
    /// `(child epoch, ‖θᵗ₁ − θᵗ₂‖)`.
    pub distance_trace: Vec<(usize, f64)>,
}

impl GeometryReport {
    /// First child epoch at which the plane cosine reaches `level`.
    pub fn epochs_to_cosine(&self, level: f64) -> Option<usize> {
        self.plane_cosine_trace
            .iter()
            .find(|(_, c)| c.is_some_and(|c| c >= level))
            .map(|(t, _)| *t)
    }
}

pub fn sibling_geometry(run: &ForkedRun, base: AngleBase) -> Result<GeometryReport> {
    let [c1, c2] = &run.child_checkpoints;
    if c1.is_empty() || c2.is_empty() {
        return Err(Error::Precondition("both children need checkpoints".into()));
    }
    let (final1, final2) = run.finals();
    let origin = ParamVector::zeros(final1.layout().clone());
    let angle_origin = sibling_angle(final1, final2, &origin);
    let angle_fork = sibling_angle(final1, final2, run.fork_point());
    let final_diff = final1.sub(final2);
    let mut plane_cosine_trace = Vec::new();
    let mut distance_trace = Vec::new();
    for (epoch, a) in c1 {
        let Some(b) = c2.get(epoch) else { continue };
        let diff = a.sub(b);
        distance_trace.push((*epoch, diff.norm()));
        plane_cosine_trace.push((*epoch, cosine(&diff, &final_diff)));
    }
    Ok(GeometryReport {
        base,
        angle: match base {
            AngleBase::Origin => angle_origin,
            AngleBase::ForkPoint => angle_fork,
        },
        angle_origin,
        angle_fork,
        plane_cosine_trace,
        distance_trace,
    })
}
