//! Finite-sum objectives and the gradient aggregates the samplers consume.

use crate::error::{Error, Result};

/// Gradient norms below this are treated as exactly zero when building
/// sampling probabilities.
pub const ZERO_GRADIENT_GUARD: f64 = 1e-15;

/// A weighted finite sum `L(θ) = Σ_i w_i l_i(θ)`.
///
/// Weights default to the uniform `1/n`. Group-structured losses (where each
/// term stands for a whole subpopulation) override [`Objective::weights`] with
/// the group proportions.
///
/// `term_value` and `term_grad` are the raw oracles: they assume `i < n_terms()`
/// and `theta.len() == dim()`. Use the checked free functions
/// ([`term_value_and_grad`], [`full_gradient`], ...) at API boundaries.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn n_terms(&self) -> usize;

    /// Mixture weights summing to one; `None` means uniform.
    fn weights(&self) -> Option<&[f64]> {
        None
    }

    /// Group label of each term, when the loss carries subpopulation structure.
    fn group_labels(&self) -> Option<&[usize]> {
        None
    }

    fn term_value(&self, i: usize, theta: &[f64]) -> f64;

    /// Writes `∇l_i(θ)` into `grad` (overwriting it).
    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]);

    fn weight(&self, i: usize) -> f64 {
        match self.weights() {
            Some(w) => w[i],
            None => 1.0 / self.n_terms() as f64,
        }
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_terms(&self) -> usize {
        (**self).n_terms()
    }
    fn weights(&self) -> Option<&[f64]> {
        (**self).weights()
    }
    fn group_labels(&self) -> Option<&[usize]> {
        (**self).group_labels()
    }
    fn term_value(&self, i: usize, theta: &[f64]) -> f64 {
        (**self).term_value(i, theta)
    }
    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]) {
        (**self).term_grad(i, theta, grad)
    }
    fn weight(&self, i: usize) -> f64 {
        (**self).weight(i)
    }
}

pub(crate) fn check_dim<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Result<()> {
    if theta.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(l_i(θ), ∇l_i(θ))` with index and dimension checks.
pub fn term_value_and_grad<O: Objective + ?Sized>(obj: &O, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    if i >= obj.n_terms() {
        return Err(Error::IndexOutOfRange {
            index: i,
            n: obj.n_terms(),
        });
    }
    check_dim(obj, theta)?;
    let mut g = vec![0.0; obj.dim()];
    obj.term_grad(i, theta, &mut g);
    Ok((obj.term_value(i, theta), g))
}

/// `L(θ)`.
pub fn value<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Result<f64> {
    check_dim(obj, theta)?;
    Ok(value_unchecked(obj, theta))
}

pub(crate) fn value_unchecked<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> f64 {
    let n = obj.n_terms();
    match obj.weights() {
        Some(w) => (0..n).map(|i| w[i] * obj.term_value(i, theta)).sum(),
        None => (0..n).map(|i| obj.term_value(i, theta)).sum::<f64>() / n as f64,
    }
}

/// `∇L(θ)`: the weighted mean of the term gradients.
pub fn full_gradient<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Result<Vec<f64>> {
    check_dim(obj, theta)?;
    Ok(full_gradient_unchecked(obj, theta))
}

pub(crate) fn full_gradient_unchecked<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Vec<f64> {
    let (n, d) = (obj.n_terms(), obj.dim());
    let mut m = vec![0.0; d];
    let mut g = vec![0.0; d];
    let weights = obj.weights();
    for i in 0..n {
        obj.term_grad(i, theta, &mut g);
        let w = weights.map_or(1.0, |w| w[i]);
        for (mk, gk) in m.iter_mut().zip(&g) {
            *mk += w * gk;
        }
    }
    if weights.is_none() {
        let inv = n as f64;
        m.iter_mut().for_each(|x| *x /= inv);
    }
    m
}

/// Per-term gradients at one point together with the aggregates of the RR scheme.
///
/// With uniform weights, `z = Σ‖∇l_i‖`, `c = z/n` and `probs_i = ‖∇l_i‖/z`.
/// For weighted objectives `c = Σ w_i‖∇l_i‖` and `probs_i = w_i‖∇l_i‖/c`.
#[derive(Debug, Clone)]
pub struct GradientProfile {
    pub dim: usize,
    /// Row-major `n × d` term gradients.
    pub grads: Vec<f64>,
    /// Gradient norms, with values below [`ZERO_GRADIENT_GUARD`] set to 0.
    pub norms: Vec<f64>,
    pub weights: Vec<f64>,
    pub z: f64,
    pub c: f64,
    /// Full gradient `m(θ) = ∇L(θ)`.
    pub mean: Vec<f64>,
    /// Sampling probabilities of the RR scheme; empty when every gradient vanishes.
    pub probs: Vec<f64>,
}

impl GradientProfile {
    pub fn n(&self) -> usize {
        self.norms.len()
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        &self.grads[i * self.dim..(i + 1) * self.dim]
    }

    /// `Σ w_i‖∇l_i‖²`, the second moment of the SGD gradient.
    pub fn second_moment(&self) -> f64 {
        self.norms.iter().zip(&self.weights).map(|(n, w)| w * n * n).sum()
    }
}

pub fn gradient_profile<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Result<GradientProfile> {
    check_dim(obj, theta)?;
    Ok(gradient_profile_unchecked(obj, theta))
}

pub(crate) fn gradient_profile_unchecked<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> GradientProfile {
    let (n, d) = (obj.n_terms(), obj.dim());
    let mut grads = vec![0.0; n * d];
    let mut norms = Vec::with_capacity(n);
    let weights: Vec<f64> = (0..n).map(|i| obj.weight(i)).collect();
    let uniform = obj.weights().is_none();
    for (i, g) in grads.chunks_exact_mut(d).enumerate() {
        obj.term_grad(i, theta, g);
        let nr = norm(g);
        norms.push(if nr < ZERO_GRADIENT_GUARD { 0.0 } else { nr });
    }
    let mut mean = vec![0.0; d];
    for (g, w) in grads.chunks_exact(d).zip(&weights) {
        let w = if uniform { 1.0 } else { *w };
        for (mk, gk) in mean.iter_mut().zip(g) {
            *mk += w * gk;
        }
    }
    let z: f64 = norms.iter().sum();
    let c = if uniform {
        mean.iter_mut().for_each(|x| *x /= n as f64);
        z / n as f64
    } else {
        norms.iter().zip(&weights).map(|(a, w)| a * w).sum()
    };
    let probs = if c > 0.0 {
        if uniform {
            norms.iter().map(|a| a / z).collect()
        } else {
            norms.iter().zip(&weights).map(|(a, w)| w * a / c).collect()
        }
    } else {
        Vec::new()
    };
    GradientProfile {
        dim: d,
        grads,
        norms,
        weights,
        z,
        c,
        mean,
        probs,
    }
}

/// Largest absolute gap between central differences of `l_i` and the analytic
/// gradient, over all terms and coordinates.
pub fn finite_difference_check<O: Objective + ?Sized>(obj: &O, theta: &[f64], h: f64) -> f64 {
    assert!(h > 0.0, "finite difference step must be positive");
    assert_eq!(theta.len(), obj.dim());
    let d = obj.dim();
    let mut g = vec![0.0; d];
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..obj.n_terms() {
        obj.term_grad(i, theta, &mut g);
        for k in 0..d {
            probe[k] = theta[k] + h;
            let up = obj.term_value(i, &probe);
            probe[k] = theta[k] - h;
            let down = obj.term_value(i, &probe);
            probe[k] = theta[k];
            worst = worst.max(((up - down) / (2.0 * h) - g[k]).abs());
        }
    }
    worst
}

/// Per-group view of a grouped objective.
///
/// Group `j` becomes a single term `V_j = Σ_{i∈j} w_i l_i / a_j` with weight
/// `a_j = Σ_{i∈j} w_i`, so the view has the same total loss as the inner
/// objective.
pub struct GroupView<'a, O: Objective + ?Sized> {
    inner: &'a O,
    members: Vec<Vec<usize>>,
    proportions: Vec<f64>,
}

impl<'a, O: Objective + ?Sized> GroupView<'a, O> {
    pub fn new(inner: &'a O) -> Result<Self> {
        let labels = inner
            .group_labels()
            .ok_or_else(|| crate::error::invalid("objective carries no group labels"))?;
        let groups = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); groups];
        for (i, &g) in labels.iter().enumerate() {
            members[g].push(i);
        }
        if members.iter().any(Vec::is_empty) {
            return Err(crate::error::invalid("group labels must be contiguous from 0"));
        }
        let proportions = members
            .iter()
            .map(|m| m.iter().map(|&i| inner.weight(i)).sum())
            .collect();
        Ok(Self {
            inner,
            members,
            proportions,
        })
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }
}

impl<O: Objective + ?Sized> Objective for GroupView<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn n_terms(&self) -> usize {
        self.members.len()
    }

    fn weights(&self) -> Option<&[f64]> {
        Some(&self.proportions)
    }

    fn term_value(&self, j: usize, theta: &[f64]) -> f64 {
        let s: f64 = self.members[j]
            .iter()
            .map(|&i| self.inner.weight(i) * self.inner.term_value(i, theta))
            .sum();
        s / self.proportions[j]
    }

    fn term_grad(&self, j: usize, theta: &[f64], grad: &mut [f64]) {
        let mut g = vec![0.0; grad.len()];
        grad.iter_mut().for_each(|x| *x = 0.0);
        for &i in &self.members[j] {
            self.inner.term_grad(i, theta, &mut g);
            let w = self.inner.weight(i) / self.proportions[j];
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += w * b;
            }
        }
    }
}
