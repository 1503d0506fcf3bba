//! One-dimensional landscapes built as the product of per-minimum quadratics,
//! `f(θ) = Πᵢ cᵢ (θ − θ*ᵢ)²` (all `cᵢ = 1` unless scales are given).
//!
//! Every minimum is an exact zero of `f`, and a barrier appears between any
//! two of them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::connectivity::barrier::{alpha_grid, argmax_first};
use crate::connectivity::predict::second_order_barrier;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::params::{LayerLayout, ParamVector};
use crate::scalar::{Dual, Scalar};

pub const DEFAULT_TOY_GRID: usize = 1001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyLandscape {
    minima: Vec<f64>,
    scales: Vec<f64>,
}

impl ToyLandscape {
    /// Unit-curvature factors; minima are sorted ascending.
    pub fn new(minima: Vec<f64>) -> Result<Self> {
        let scales = vec![1.0; minima.len()];
        Self::with_scales(minima, scales)
    }

    /// Per-minimum curvature scales `cᵢ > 0`, paired with `minima` before
    /// sorting.
    pub fn with_scales(minima: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if minima.is_empty() {
            return Err(Error::Config("toy landscape needs at least one minimum".into()));
        }
        if scales.len() != minima.len() {
            return Err(Error::Config("one curvature scale per minimum".into()));
        }
        if minima.iter().chain(&scales).any(|v| !v.is_finite()) || scales.iter().any(|&c| c <= 0.0) {
            return Err(Error::Config("minima must be finite and scales positive".into()));
        }
        let mut pairs: Vec<(f64, f64)> = minima.into_iter().zip(scales).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("minima must be distinct".into()));
        }
        let (minima, scales) = pairs.into_iter().unzip();
        Ok(Self { minima, scales })
    }

    pub fn minima(&self) -> &[f64] {
        &self.minima
    }

    fn factor<T: Scalar>(&self, i: usize, theta: T) -> T {
        let r = theta - T::constant(self.minima[i]);
        (r * r).scale(self.scales[i])
    }

    /// Product evaluated left to right over the sorted minima.
    pub fn loss(&self, theta: f64) -> f64 {
        (0..self.minima.len()).fold(1.0, |acc, i| acc * self.factor(i, theta))
    }

    fn derivative_generic<T: Scalar>(&self, theta: T) -> T {
        let n = self.minima.len();
        let mut total = T::zero();
        for i in 0..n {
            let r = theta - T::constant(self.minima[i]);
            let mut term = r.scale(2.0 * self.scales[i]);
            for j in (0..n).filter(|&j| j != i) {
                term = term * self.factor(j, theta);
            }
            total += term;
        }
        total
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        self.derivative_generic(theta)
    }

    /// Closed-form `f″`: with `gᵢ = cᵢ(θ − θ*ᵢ)²`,
    /// `f″ = Σᵢ gᵢ″ Π_{j≠i} gⱼ + Σ_{i≠k} gᵢ′ gₖ′ Π_{j≠i,k} gⱼ`.
    pub fn second_derivative(&self, theta: f64) -> f64 {
        let n = self.minima.len();
        let g: Vec<f64> = (0..n).map(|i| self.factor(i, theta)).collect();
        let dg: Vec<f64> = (0..n)
            .map(|i| 2.0 * self.scales[i] * (theta - self.minima[i]))
            .collect();
        let mut total = 0.0;
        for i in 0..n {
            let rest: f64 = (0..n).filter(|&j| j != i).map(|j| g[j]).product();
            total += 2.0 * self.scales[i] * rest;
            for k in (0..n).filter(|&k| k != i) {
                let rest: f64 = (0..n).filter(|&j| j != i && j != k).map(|j| g[j]).product();
                total += dg[i] * dg[k] * rest;
            }
        }
        total
    }

    fn pair(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        if i == j {
            return Err(Error::Precondition("barrier needs two distinct minima".into()));
        }
        let n = self.minima.len();
        if i >= n || j >= n {
            return Err(Error::Bounds(format!("minimum index out of 0..{n}")));
        }
        Ok((self.minima[i], self.minima[j]))
    }

    /// Barrier curve on an even grid along `[θ*ᵢ, θ*ⱼ]`.
    pub fn barrier_curve(&self, i: usize, j: usize, grid_size: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = self.pair(i, j)?;
        let (fa, fb) = (self.loss(a), self.loss(b));
        let alphas = alpha_grid(grid_size)?;
        let barrier = alphas
            .iter()
            .map(|&t| self.loss((1.0 - t) * a + t * b) - ((1.0 - t) * fa + t * fb))
            .collect();
        Ok((alphas, barrier))
    }

    /// `(α*, max barrier)` over the grid; ties go to the smallest α.
    pub fn barrier(&self, i: usize, j: usize, grid_size: usize) -> Result<(f64, f64)> {
        let (alphas, barrier) = self.barrier_curve(i, j, grid_size)?;
        Ok(argmax_first(&alphas, &barrier))
    }

    /// Second-order prediction at α = 1/2 from the analytic curvatures at
    /// both minima: `⅛ Δ (½f″(θ*ᵢ) + ½f″(θ*ⱼ)) Δ`.
    pub fn predicted_barrier(&self, i: usize, j: usize) -> Result<f64> {
        let (a, b) = self.pair(i, j)?;
        let delta = b - a;
        let q1 = delta * self.second_derivative(a) * delta;
        let q2 = delta * self.second_derivative(b) * delta;
        Ok(second_order_barrier(0.5, q1, q2))
    }

    /// `(θ, f(θ))` samples on `[lo, hi]`.
    pub fn trace(&self, lo: f64, hi: f64, points: usize) -> Result<Vec<(f64, f64)>> {
        let alphas = alpha_grid(points)?;
        Ok(alphas
            .iter()
            .map(|&t| {
                let x = (1.0 - t) * lo + t * hi;
                (x, self.loss(x))
            })
            .collect())
    }
}

pub fn toy_loss(land: &ToyLandscape, theta: f64) -> f64 {
    land.loss(theta)
}

pub fn toy_barrier(land: &ToyLandscape, i: usize, j: usize, grid_size: usize) -> Result<(f64, f64)> {
    land.barrier(i, j, grid_size)
}

pub fn toy_predicted_barrier(land: &ToyLandscape, i: usize, j: usize) -> Result<f64> {
    land.predicted_barrier(i, j)
}

/// The landscape as a one-parameter [`Objective`]; its Hessian-vector
/// product differentiates `f′` in dual numbers rather than using the
/// closed-form `f″`.
pub struct ToyObjective {
    land: ToyLandscape,
    layout: Arc<LayerLayout>,
}

impl ToyObjective {
    pub fn new(land: ToyLandscape) -> Self {
        let layout = LayerLayout::from_lengths([("theta", 1)]).expect("single segment");
        Self {
            land,
            layout: Arc::new(layout),
        }
    }

    pub fn point(&self, theta: f64) -> ParamVector {
        ParamVector::new(vec![theta], self.layout.clone()).expect("finite theta")
    }
}

impl Objective for ToyObjective {
    fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    fn data_id(&self) -> &str {
        "toy-landscape"
    }

    fn loss(&self, theta: &ParamVector) -> Result<f64> {
        theta.check_layout(&self.layout)?;
        Ok(self.land.loss(theta.values()[0]))
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        theta.check_layout(&self.layout)?;
        ParamVector::new(vec![self.land.derivative(theta.values()[0])], self.layout.clone())
    }

    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        theta.check_layout(&self.layout)?;
        v.check_layout(&self.layout)?;
        let d = self
            .land
            .derivative_generic(Dual::new(theta.values()[0], v.values()[0]));
        ParamVector::new(vec![d.eps], self.layout.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> ToyLandscape {
        ToyLandscape::new(vec![-1.5, -1.0, 1.0, 1.5]).unwrap()
    }

    #[test]
    fn loss_examples() {
        let two = ToyLandscape::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(toy_loss(&two, 0.0), 1.0);
        assert_eq!(toy_loss(&two, 1.0), 0.0);
        assert_eq!(toy_loss(&four(), 0.0), 5.0625);
    }

    #[test]
    fn minima_are_exact_zeros_and_positive_elsewhere() {
        let land = four();
        for &m in land.minima() {
            assert_eq!(land.loss(m), 0.0);
        }
        for (x, f) in land.trace(-3.0, 3.0, 6001).unwrap() {
            if !land.minima().contains(&x) {
                assert!(f > 0.0, "f({x}) = {f}");
            }
        }
    }

    #[test]
    fn second_derivative_matches_hand_formula() {
        // (θ² − 1)² has f″ = 12θ² − 4
        let two = ToyLandscape::new(vec![-1.0, 1.0]).unwrap();
        for x in [-2.0, -0.3, 0.0, 0.7, 1.0, 3.0] {
            let expected = 12.0 * x * x - 4.0;
            assert!((two.second_derivative(x) - expected).abs() < 1e-12);
            assert!((two.derivative(x) - 4.0 * x * (x * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_minimum_barrier_and_prediction() {
        let two = ToyLandscape::new(vec![-1.0, 1.0]).unwrap();
        assert_eq!(toy_barrier(&two, 0, 1, DEFAULT_TOY_GRID).unwrap(), (0.5, 1.0));
        assert_eq!(toy_predicted_barrier(&two, 0, 1).unwrap(), 4.0);
        assert_eq!(toy_predicted_barrier(&two, 1, 0).unwrap(), 4.0);
        assert!(matches!(toy_predicted_barrier(&two, 0, 0), Err(Error::Precondition(_))));
        assert!(matches!(toy_barrier(&two, 1, 1, 11), Err(Error::Precondition(_))));
    }

    #[test]
    fn four_minimum_barriers() {
        let land = four();
        let outer = toy_barrier(&land, 0, 3, DEFAULT_TOY_GRID).unwrap().1;
        let inner = toy_barrier(&land, 1, 2, DEFAULT_TOY_GRID).unwrap().1;
        let adjacent = toy_barrier(&land, 0, 1, DEFAULT_TOY_GRID).unwrap().1;
        // both segments cross θ = 0, where f peaks on [-1.5, 1.5]
        assert_eq!(outer, 5.0625);
        assert_eq!(inner, 5.0625);
        assert!(adjacent > 0.0 && adjacent <= outer);
        // the curvature-aware prediction does separate them
        assert!(toy_predicted_barrier(&land, 0, 3).unwrap() > toy_predicted_barrier(&land, 1, 2).unwrap());
    }

    #[test]
    fn curvature_scales_multiply() {
        let scaled = ToyLandscape::with_scales(vec![-1.0, 1.0], vec![2.0, 3.0]).unwrap();
        assert_eq!(scaled.loss(0.0), 6.0);
        assert!(ToyLandscape::with_scales(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn dual_hvp_matches_closed_form() {
        let land = four();
        let obj = ToyObjective::new(land.clone());
        for x in [-1.5, -0.4, 0.0, 1.2] {
            let h = obj.hvp(&obj.point(x), &obj.point(1.0)).unwrap().values()[0];
            let c = land.second_derivative(x);
            assert!((h - c).abs() <= 1e-10 * c.abs().max(1.0), "{x}: {h} vs {c}");
        }
    }
}
