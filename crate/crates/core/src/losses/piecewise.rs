//! Two-group piecewise-linear loss with a flat local minimum at `θ = -1` and a
//! sharp global minimum at `θ = 1/K`.
//!
//! ```text
//! V1(θ) = |θ+1| - 1  (θ ≤ 0),   εθ            (θ > 0)
//! V2(θ) = -εθ        (θ ≤ 0),   |Kθ - 1| - 1  (θ > 0)
//! V(θ)  = a1 V1(θ) + a2 V2(θ)
//! ```
//!
//! Derivatives at the kinks `{-1, 0, 1/K}` are right-hand derivatives.

use crate::error::{invalid, Result};
use crate::objective::Objective;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PiecewiseParams {
    pub a1: f64,
    pub a2: f64,
    pub eps: f64,
    pub k: f64,
}

impl PiecewiseParams {
    pub fn new(a1: f64, a2: f64, eps: f64, k: f64) -> Result<Self> {
        let p = Self { a1, a2, eps, k };
        p.validate()?;
        Ok(p)
    }

    /// `a1 = 0.4, a2 = 0.6, ε = 0.1, K = 5`.
    pub fn standard() -> Self {
        Self {
            a1: 0.4,
            a2: 0.6,
            eps: 0.1,
            k: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { a1, a2, eps, k } = *self;
        if !(a1 > 0.0 && a1 < 1.0 && a2 > 0.0 && a2 < 1.0) {
            return Err(invalid(format!("proportions must lie in (0,1): a1={a1}, a2={a2}")));
        }
        if (a1 + a2 - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("a1 + a2 must equal 1, got {}", a1 + a2)));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid(format!("eps must lie in (0,1), got {eps}")));
        }
        if !(k > 1.0 && k.is_finite()) {
            return Err(invalid(format!("K must exceed 1, got {k}")));
        }
        Ok(())
    }

    pub fn v1(&self, t: f64) -> f64 {
        if t <= 0.0 {
            (t + 1.0).abs() - 1.0
        } else {
            self.eps * t
        }
    }

    pub fn v2(&self, t: f64) -> f64 {
        if t <= 0.0 {
            -self.eps * t
        } else {
            (self.k * t - 1.0).abs() - 1.0
        }
    }

    pub fn dv1(&self, t: f64) -> f64 {
        if t < -1.0 {
            -1.0
        } else if t < 0.0 {
            1.0
        } else {
            self.eps
        }
    }

    pub fn dv2(&self, t: f64) -> f64 {
        if t < 0.0 {
            -self.eps
        } else if t < 1.0 / self.k {
            -self.k
        } else {
            self.k
        }
    }

    pub fn total(&self, t: f64) -> f64 {
        self.a1 * self.v1(t) + self.a2 * self.v2(t)
    }

    pub fn total_derivative(&self, t: f64) -> f64 {
        self.a1 * self.dv1(t) + self.a2 * self.dv2(t)
    }

    pub fn proportions(&self) -> [f64; 2] {
        [self.a1, self.a2]
    }
}

/// The piecewise example as a two-term objective weighted by `(a1, a2)`.
#[derive(Debug, Clone)]
pub struct PiecewiseExample {
    params: PiecewiseParams,
    weights: [f64; 2],
}

const LABELS: [usize; 2] = [0, 1];

impl PiecewiseExample {
    pub fn new(params: PiecewiseParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            weights: params.proportions(),
        })
    }

    pub fn params(&self) -> &PiecewiseParams {
        &self.params
    }
}

impl Objective for PiecewiseExample {
    fn dim(&self) -> usize {
        1
    }

    fn n_terms(&self) -> usize {
        2
    }

    fn weights(&self) -> Option<&[f64]> {
        Some(&self.weights)
    }

    fn group_labels(&self) -> Option<&[usize]> {
        Some(&LABELS)
    }

    fn term_value(&self, i: usize, theta: &[f64]) -> f64 {
        match i {
            0 => self.params.v1(theta[0]),
            _ => self.params.v2(theta[0]),
        }
    }

    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]) {
        grad[0] = match i {
            0 => self.params.dv1(theta[0]),
            _ => self.params.dv2(theta[0]),
        };
    }
}
