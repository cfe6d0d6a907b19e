//! Quadratic helpers used for calibration and stability experiments.

use crate::error::{invalid, Result};
use crate::objective::Objective;

/// `l_i(θ) = ½ h_i ‖θ − c_i‖²`.
#[derive(Debug, Clone)]
pub struct QuadraticTerms {
    dim: usize,
    curvatures: Vec<f64>,
    centers: Vec<Vec<f64>>,
}

impl QuadraticTerms {
    pub fn new(curvatures: Vec<f64>, centers: Vec<Vec<f64>>) -> Result<Self> {
        if curvatures.is_empty() || curvatures.len() != centers.len() {
            return Err(invalid("need one curvature per center and at least one term"));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(invalid("centers must share a positive dimension"));
        }
        Ok(Self {
            dim,
            curvatures,
            centers,
        })
    }

    /// Minimiser of the uniform average: the curvature-weighted mean of the centers.
    pub fn minimizer(&self) -> Vec<f64> {
        let total: f64 = self.curvatures.iter().sum();
        let mut out = vec![0.0; self.dim];
        for (h, c) in self.curvatures.iter().zip(&self.centers) {
            for (o, x) in out.iter_mut().zip(c) {
                *o += h * x / total;
            }
        }
        out
    }

    /// Hessian of the average loss is `mean(h_i)·I`.
    pub fn strong_convexity(&self) -> f64 {
        self.curvatures.iter().sum::<f64>() / self.curvatures.len() as f64
    }
}

impl Objective for QuadraticTerms {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_terms(&self) -> usize {
        self.curvatures.len()
    }

    fn term_value(&self, i: usize, theta: &[f64]) -> f64 {
        let r2: f64 = theta.iter().zip(&self.centers[i]).map(|(t, c)| (t - c) * (t - c)).sum();
        0.5 * self.curvatures[i] * r2
    }

    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]) {
        let h = self.curvatures[i];
        for ((g, t), c) in grad.iter_mut().zip(theta).zip(&self.centers[i]) {
            *g = h * (t - c);
        }
    }
}

/// `l_i(θ) = ½ (x_iᵀθ − y_i)²`, the linear-model instance of the squared loss.
#[derive(Debug, Clone)]
pub struct LinearLeastSquares {
    dim: usize,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl LinearLeastSquares {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if features.is_empty() || features.len() != targets.len() {
            return Err(invalid("need one target per feature vector and at least one sample"));
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|x| x.len() != dim) {
            return Err(invalid("features must share a positive dimension"));
        }
        Ok(Self { dim, features, targets })
    }

    /// Targets chosen so that `θ*` interpolates every sample.
    pub fn interpolating(features: Vec<Vec<f64>>, theta_star: &[f64]) -> Result<Self> {
        let targets = features
            .iter()
            .map(|x| x.iter().zip(theta_star).map(|(a, b)| a * b).sum())
            .collect();
        Self::new(features, targets)
    }

    fn residual(&self, i: usize, theta: &[f64]) -> f64 {
        let fit: f64 = self.features[i].iter().zip(theta).map(|(a, b)| a * b).sum();
        fit - self.targets[i]
    }
}

impl Objective for LinearLeastSquares {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_terms(&self) -> usize {
        self.targets.len()
    }

    fn term_value(&self, i: usize, theta: &[f64]) -> f64 {
        let r = self.residual(i, theta);
        0.5 * r * r
    }

    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]) {
        let r = self.residual(i, theta);
        for (g, x) in grad.iter_mut().zip(&self.features[i]) {
            *g = r * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{finite_difference_check, term_value_and_grad};

    #[test]
    fn quadratic_term_at_three() {
        let q = QuadraticTerms::new(vec![1.0], vec![vec![1.0]]).unwrap();
        let (v, g) = term_value_and_grad(&q, 0, &[3.0]).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g, vec![2.0]);
    }

    #[test]
    fn central_differences_exact_on_quadratics() {
        let q = QuadraticTerms::new(
            vec![1.0, 2.5, 0.3],
            vec![vec![1.0, -2.0], vec![0.5, 0.5], vec![-3.0, 4.0]],
        )
        .unwrap();
        for h in [1e-1, 1e-3, 1e-5] {
            assert!(finite_difference_check(&q, &[0.7, -0.2], h) < 1e-9);
        }
    }

    #[test]
    fn interpolation_has_zero_gradient_at_solution() {
        let ls = LinearLeastSquares::interpolating(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], &[0.3, -0.7]).unwrap();
        let g = crate::full_gradient(&ls, &[0.3, -0.7]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        assert!(finite_difference_check(&ls, &[1.0, 1.0], 1e-4) < 1e-8);
    }
}
