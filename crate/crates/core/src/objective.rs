//! A loss bound to its evaluation data, as seen by the connectivity analysis.

use std::sync::Arc;

use crate::data::DatasetSlice;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::params::{LayerLayout, ParamVector};
use crate::scalar::{Dual, Scalar};

/// Twice-differentiable objective `ℒ(θ)` over a fixed evaluation set.
pub trait Objective: Sync {
    fn layout(&self) -> &Arc<LayerLayout>;

    /// Identifier of the evaluation data, recorded in curve provenance.
    fn data_id(&self) -> &str;

    fn loss(&self, theta: &ParamVector) -> Result<f64>;

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector>;

    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> Result<ParamVector>;

    fn error_rate(&self, _theta: &ParamVector) -> Result<f64> {
        Err(Error::UnsupportedMetric("error_rate"))
    }

    /// `uᵀ ∇²ℒ(θ) v` via one Hessian-vector product.
    fn quadratic_form(&self, theta: &ParamVector, u: &ParamVector, v: &ParamVector) -> Result<f64> {
        u.check_layout(self.layout())?;
        Ok(u.dot(&self.hvp(theta, v)?))
    }
}

/// A network evaluated on a dataset slice.
#[derive(Clone, Copy)]
pub struct NetObjective<'a> {
    pub net: &'a Network,
    pub data: &'a DatasetSlice,
}

impl<'a> NetObjective<'a> {
    pub fn new(net: &'a Network, data: &'a DatasetSlice) -> Self {
        Self { net, data }
    }
}

impl Objective for NetObjective<'_> {
    fn layout(&self) -> &Arc<LayerLayout> {
        self.net.layout()
    }

    fn data_id(&self) -> &str {
        self.data.id()
    }

    fn loss(&self, theta: &ParamVector) -> Result<f64> {
        self.net.loss(theta, self.data)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.net.gradient(theta, self.data)
    }

    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        self.net.hvp(theta, v, self.data)
    }

    fn error_rate(&self, theta: &ParamVector) -> Result<f64> {
        self.net.error_rate(theta, self.data)
    }
}

/// `ℒ(θ) = ½ Σ dᵢ θᵢ²`, a closed-form surrogate with Hessian `diag(d)`.
#[derive(Clone, Debug)]
pub struct DiagonalQuadratic {
    diag: Vec<f64>,
    layout: Arc<LayerLayout>,
}

impl DiagonalQuadratic {
    /// One single-parameter layer per diagonal entry (`p0`, `p1`, ...).
    pub fn new(diag: Vec<f64>) -> Self {
        let layout = LayerLayout::from_lengths(diag.iter().enumerate().map(|(i, _)| (format!("p{i}"), 1)))
            .expect("generated names are unique");
        Self {
            diag,
            layout: Arc::new(layout),
        }
    }

    fn gradient_generic<T: Scalar>(&self, theta: &[T]) -> Vec<T> {
        theta.iter().zip(&self.diag).map(|(&t, &d)| t.scale(d)).collect()
    }
}

impl Objective for DiagonalQuadratic {
    fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    fn data_id(&self) -> &str {
        "diagonal-quadratic"
    }

    fn loss(&self, theta: &ParamVector) -> Result<f64> {
        theta.check_layout(&self.layout)?;
        Ok(0.5
            * theta
                .values()
                .iter()
                .zip(&self.diag)
                .fold(0.0, |acc, (t, d)| acc + d * t * t))
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        theta.check_layout(&self.layout)?;
        ParamVector::new(self.gradient_generic(theta.values()), self.layout.clone())
    }

    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        theta.check_layout(&self.layout)?;
        v.check_layout(&self.layout)?;
        let duals: Vec<Dual> = theta
            .values()
            .iter()
            .zip(v.values())
            .map(|(&t, &d)| Dual::new(t, d))
            .collect();
        let g = self.gradient_generic(&duals);
        ParamVector::new(g.iter().map(|d| d.eps).collect(), self.layout.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_examples() {
        let half_norm = DiagonalQuadratic::new(vec![1.0, 1.0]);
        let theta = ParamVector::new(vec![1.0, -2.0], half_norm.layout().clone()).unwrap();
        assert_eq!(half_norm.gradient(&theta).unwrap().values(), &[1.0, -2.0]);

        let q = DiagonalQuadratic::new(vec![1.0, 2.0]);
        let layout = q.layout().clone();
        let ones = ParamVector::new(vec![1.0, 1.0], layout.clone()).unwrap();
        assert_eq!(q.hvp(&theta, &ones).unwrap().values(), &[1.0, 2.0]);
        let zero = ParamVector::zeros(layout.clone());
        assert_eq!(q.hvp(&theta, &zero).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(q.quadratic_form(&theta, &zero, &zero).unwrap(), 0.0);
        let e1 = ParamVector::new(vec![1.0, 0.0], layout.clone()).unwrap();
        let e2 = ParamVector::new(vec![0.0, 1.0], layout).unwrap();
        assert_eq!(q.quadratic_form(&theta, &e1, &e2).unwrap(), 0.0);
        assert!(matches!(q.error_rate(&theta), Err(Error::UnsupportedMetric(_))));
    }
}
