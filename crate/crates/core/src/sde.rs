//! Diffusion approximations of SGD and RR.
//!
//! Both schemes are modelled as `dΘ = -∇L(Θ) dt + √η σ(Θ) dW` where `σσᵀ` is the
//! gradient-noise covariance of the scheme (`Σ¹` for SGD, `Σ²` for RR).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::PiecewiseParams;
use crate::objective::{check_dim, full_gradient_unchecked, gradient_profile_unchecked, Objective};
use crate::rng::{seeded, trial_rng, StreamRng};
use crate::samplers::Trajectory;

fn outer_sum(profile: &crate::GradientProfile, coeff: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let d = profile.dim;
    let mut s = DMatrix::zeros(d, d);
    for i in 0..profile.n() {
        let c = coeff(i);
        if c == 0.0 {
            continue;
        }
        let g = profile.grad(i);
        for r in 0..d {
            for k in 0..d {
                s[(r, k)] += c * g[r] * g[k];
            }
        }
    }
    s
}

fn minus_mean_outer(mut s: DMatrix<f64>, m: &[f64]) -> DMatrix<f64> {
    let d = m.len();
    for r in 0..d {
        for k in 0..d {
            s[(r, k)] -= m[r] * m[k];
        }
    }
    symmetrize(s)
}

fn symmetrize(s: DMatrix<f64>) -> DMatrix<f64> {
    (&s + s.transpose()) * 0.5
}

/// `Σ¹ = Σ w_i ∇l_i∇l_iᵀ − m mᵀ`, the covariance of the SGD gradient.
pub fn covariance_sgd<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(obj, theta)?;
    let p = gradient_profile_unchecked(obj, theta);
    Ok(minus_mean_outer(outer_sum(&p, |i| p.weights[i]), &p.mean))
}

/// `Σ² = C Σ w_i ∇l_i∇l_iᵀ/‖∇l_i‖ − m mᵀ`, the covariance of the RR update
/// direction. Zero when every gradient vanishes.
pub fn covariance_rr<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(obj, theta)?;
    let p = gradient_profile_unchecked(obj, theta);
    let d = obj.dim();
    if p.c == 0.0 {
        return Ok(DMatrix::zeros(d, d));
    }
    let s = outer_sum(&p, |i| {
        if p.norms[i] > 0.0 {
            p.c * p.weights[i] / p.norms[i]
        } else {
            0.0
        }
    });
    Ok(minus_mean_outer(s, &p.mean))
}

#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub trace1: f64,
    pub trace2: f64,
    /// `trace1 − trace2`.
    pub gap: f64,
    /// `Σ w_i‖∇l_i‖² − C²`, the same gap computed from the norms alone.
    pub gap_from_norms: f64,
}

pub fn trace_gap<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Result<CovarianceReport> {
    let sigma1 = covariance_sgd(obj, theta)?;
    let sigma2 = covariance_rr(obj, theta)?;
    let p = gradient_profile_unchecked(obj, theta);
    let (trace1, trace2) = (sigma1.trace(), sigma2.trace());
    Ok(CovarianceReport {
        gap: trace1 - trace2,
        gap_from_norms: p.second_moment() - p.c * p.c,
        sigma1,
        sigma2,
        trace1,
        trace2,
    })
}

/// Symmetric square root of a covariance, negative eigenvalues clipped to 0.
pub fn diffusion_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    if d == 1 {
        return DMatrix::from_element(1, 1, cov[(0, 0)].max(0.0).sqrt());
    }
    let eig = symmetrize(cov.clone()).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Gradient-noise model of the scheme being approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    Sgd,
    Rr,
}

impl NoiseScheme {
    pub fn covariance<O: Objective + ?Sized>(&self, obj: &O, theta: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            NoiseScheme::Sgd => covariance_sgd(obj, theta),
            NoiseScheme::Rr => covariance_rr(obj, theta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseScheme::Sgd => "sgd",
            NoiseScheme::Rr => "rr",
        }
    }
}

/// Euler–Maruyama path `Θ_{t+dt} = Θ_t − F(Θ_t) dt + √dt σ(Θ_t) ξ` on stream 0
/// of `seed`. `etas` of the result hold `dt`; `indices` stay empty.
pub fn euler_maruyama<F, G>(
    drift: F,
    diffusion: G,
    theta0: &[f64],
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> DMatrix<f64>,
{
    let mut traj = euler_maruyama_with(drift, diffusion, theta0, dt, steps, &mut seeded(seed))?;
    traj.seed = seed;
    Ok(traj)
}

/// [`euler_maruyama`] on a caller-provided stream. Each step draws `d` normals.
pub fn euler_maruyama_with<F, G>(
    drift: F,
    diffusion: G,
    theta0: &[f64],
    dt: f64,
    steps: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> DMatrix<f64>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let d = theta0.len();
    let sqrt_dt = dt.sqrt();
    let mut traj = Trajectory::new(theta0, 0);
    let mut theta = theta0.to_vec();
    let mut xi = DVector::zeros(d);
    for k in 1..=steps {
        let f = drift(&theta);
        let s = diffusion(&theta);
        if f.len() != d || s.nrows() != d || s.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: f.len(),
            });
        }
        for x in xi.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let noise = &s * &xi;
        for r in 0..d {
            theta[r] += -f[r] * dt + sqrt_dt * noise[r];
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        traj.push(&theta, dt, None);
    }
    Ok(traj)
}

/// Integration grid for the piecewise equilibrium density. Each side of `θ = 0`
/// gets `points_per_side` nodes including the shared endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub lo: f64,
    pub hi: f64,
    pub points_per_side: usize,
    /// Allowed relative change of the side masses when the spacing is doubled.
    pub self_check_tol: f64,
}

impl Default for DensityGrid {
    fn default() -> Self {
        Self {
            lo: -4.0,
            hi: 3.0,
            points_per_side: 200_001,
            self_check_tol: 1e-4,
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log of the trapezoidal integral of `exp(f)` on uniform nodes `a..=b`.
fn log_trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize, stride: usize) -> f64 {
    let h = (b - a) / (n - 1) as f64;
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let last = *idx.last().unwrap();
    let hs = h * stride as f64;
    log_sum_exp(idx.iter().map(|&i| {
        let w = if i == 0 || i == last { 0.5 } else { 1.0 };
        f(a + i as f64 * h) + (w * hs).ln()
    }))
}

/// Stationary density of the SGD diffusion for the piecewise example, with
/// regional noise levels `a1a2` (θ < 0) and `K²a1a2` (θ > 0) in the `ε → 0` limit:
///
/// ```text
/// p(θ) = exp(-2V/(a1 a2 η)) / Z1            θ < 0
/// p(θ) = exp(-2V/(K² a1 a2 η)) / Z2         θ > 0,   Z2 = K² Z1
/// ```
///
/// Masses are kept in log form since the side ratio can exceed `1e29`.
#[derive(Debug, Clone)]
pub struct EquilibriumDensity1D {
    pub params: PiecewiseParams,
    pub eta: f64,
    pub grid: DensityGrid,
    pub log_z1: f64,
    pub log_z2: f64,
    pub log_mass_left: f64,
    pub log_mass_right: f64,
}

impl EquilibriumDensity1D {
    fn temperature_left(&self) -> f64 {
        self.params.a1 * self.params.a2 * self.eta
    }

    fn log_unnormalized_left(params: &PiecewiseParams, eta: f64, t: f64) -> f64 {
        -2.0 * params.total(t) / (params.a1 * params.a2 * eta)
    }

    fn log_unnormalized_right(params: &PiecewiseParams, eta: f64, t: f64) -> f64 {
        let k2 = params.k * params.k;
        -k2.ln() - 2.0 * params.total(t) / (k2 * params.a1 * params.a2 * eta)
    }

    /// `p(θ)`; at `θ = 0` the left limit.
    pub fn density(&self, t: f64) -> f64 {
        self.log_density(t).exp()
    }

    pub fn log_density(&self, t: f64) -> f64 {
        if t <= 0.0 {
            Self::log_unnormalized_left(&self.params, self.eta, t) - self.log_z1
        } else {
            Self::log_unnormalized_right(&self.params, self.eta, t) - self.log_z1
        }
    }

    /// `p(0⁻) / p(0⁺)`, which equals `K²`.
    pub fn side_ratio(&self) -> f64 {
        let right = Self::log_unnormalized_right(&self.params, self.eta, 0.0) - self.log_z1;
        (self.log_density(0.0) - right).exp()
    }

    /// Relative mismatch of `σ²p` across `θ = 0`.
    pub fn flux_mismatch(&self) -> f64 {
        let k2 = self.params.k * self.params.k;
        let t = self.temperature_left();
        let left = t * self.log_density(0.0).exp();
        let right = k2 * t * (Self::log_unnormalized_right(&self.params, self.eta, 0.0) - self.log_z1).exp();
        ((left - right) / left).abs()
    }

    pub fn mass_left(&self) -> f64 {
        self.log_mass_left.exp()
    }

    pub fn mass_right(&self) -> f64 {
        self.log_mass_right.exp()
    }

    /// `mass(θ<0) / mass(θ>0)`.
    pub fn basin_mass_ratio(&self) -> f64 {
        (self.log_mass_left - self.log_mass_right).exp()
    }

    /// `theta,p` over the grid, every `stride`-th node per side. The node at 0
    /// appears twice, once per side limit.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["theta", "p"])?;
        let n = self.grid.points_per_side;
        let hl = -self.grid.lo / (n - 1) as f64;
        let hr = self.grid.hi / (n - 1) as f64;
        for i in (0..n).step_by(stride) {
            let t = self.grid.lo + i as f64 * hl;
            let t = if i == n - 1 { 0.0 } else { t };
            w.write_record([t.to_string(), self.density(t).to_string()])?;
        }
        if !(n - 1).is_multiple_of(stride) {
            w.write_record(["0".to_string(), self.density(0.0).to_string()])?;
        }
        for i in (0..n).step_by(stride) {
            let t = i as f64 * hr;
            let p = (Self::log_unnormalized_right(&self.params, self.eta, t) - self.log_z1).exp();
            w.write_record([t.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn side_log_masses(params: &PiecewiseParams, eta: f64, lo: f64, hi: f64, n: usize, stride: usize) -> (f64, f64) {
    let left = log_trapezoid(
        |t| EquilibriumDensity1D::log_unnormalized_left(params, eta, t),
        lo,
        0.0,
        n,
        stride,
    );
    let right = log_trapezoid(
        |t| EquilibriumDensity1D::log_unnormalized_right(params, eta, t),
        0.0,
        hi,
        n,
        stride,
    );
    (left, right)
}

/// Quadrature-normalized stationary density of the piecewise example.
///
/// Fails with [`Error::GridTooCoarse`] when halving the resolution moves a
/// side mass by more than `grid.self_check_tol`, or when doubling the domain
/// moves the basin-mass ratio by more than `1e-8` relative.
pub fn equilibrium_density(params: &PiecewiseParams, eta: f64, grid: DensityGrid) -> Result<EquilibriumDensity1D> {
    params.validate()?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    if !(grid.lo < -1.0 && grid.hi > 1.0 / params.k) {
        return Err(invalid(format!(
            "grid [{}, {}] must cover both minima -1 and 1/K",
            grid.lo, grid.hi
        )));
    }
    if grid.points_per_side < 5 || !(grid.points_per_side - 1).is_multiple_of(2) {
        return Err(invalid("points_per_side must be odd and at least 5"));
    }
    let n = grid.points_per_side;
    let (l, r) = side_log_masses(params, eta, grid.lo, grid.hi, n, 1);
    let (lc, rc) = side_log_masses(params, eta, grid.lo, grid.hi, n, 2);
    let worst = (l - lc).exp_m1().abs().max((r - rc).exp_m1().abs());
    if worst > grid.self_check_tol {
        return Err(Error::GridTooCoarse(format!(
            "side masses move by {worst:.3e} at half resolution (tolerance {:.1e})",
            grid.self_check_tol
        )));
    }
    let (lw, rw) = side_log_masses(params, eta, 2.0 * grid.lo, 2.0 * grid.hi, 2 * n - 1, 1);
    let drift = ((lw - rw) - (l - r)).exp_m1().abs();
    if drift > 1e-8 {
        return Err(Error::GridTooCoarse(format!(
            "basin-mass ratio moves by {drift:.3e} when the domain is doubled; widen the grid"
        )));
    }
    let log_z1 = log_sum_exp([l, r].into_iter());
    Ok(EquilibriumDensity1D {
        params: *params,
        eta,
        grid,
        log_z1,
        log_z2: log_z1 + 2.0 * params.k.ln(),
        log_mass_left: l - log_z1,
        log_mass_right: r - log_z1,
    })
}

/// Per-member results of a deviation ensemble.
#[derive(Debug, Clone)]
pub struct DeviationEnsemble {
    pub scheme: NoiseScheme,
    pub eta: f64,
    pub horizon: f64,
    pub dt: f64,
    /// `sup_t ‖Θ_t − φ_t‖` per member.
    pub sup_deviation: Vec<f64>,
    /// Left Riemann sum of `∫ Tr(σσᵀ) ds = η ∫ Tr Σ(Θ_s) ds` per member.
    pub trace_integrals: Vec<f64>,
    /// Members whose path became non-finite; counted as exceeding every radius.
    pub diverged: usize,
    pub paths: Vec<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    pub delta: f64,
    pub horizon: f64,
    pub trials: usize,
    pub empirical_prob: f64,
    pub trace_integral: f64,
    pub trace_integral_se: f64,
}

impl DeviationEnsemble {
    pub fn trials(&self) -> usize {
        self.sup_deviation.len()
    }

    /// Fraction of members with `sup_t ‖Θ_t − φ_t‖ > δ`.
    pub fn exceedance(&self, delta: f64) -> f64 {
        let hits = self.sup_deviation.iter().filter(|s| **s > delta).count();
        hits as f64 / self.trials() as f64
    }

    /// Mean and standard error of the trace integral.
    pub fn trace_integral_stats(&self) -> (f64, f64) {
        mean_and_se(&self.trace_integrals)
    }

    pub fn estimate(&self, delta: f64) -> DeviationEstimate {
        let (m, se) = self.trace_integral_stats();
        DeviationEstimate {
            delta,
            horizon: self.horizon,
            trials: self.trials(),
            empirical_prob: self.exceedance(delta),
            trace_integral: m,
            trace_integral_se: se,
        }
    }

    /// `trial,t,theta_1..theta_d` for every stored path.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let d = self.paths.first().map_or(0, Trajectory::dim);
        let mut header = vec!["trial".to_string(), "t".to_string()];
        header.extend((1..=d).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        for (trial, path) in self.paths.iter().enumerate() {
            let n = path.len();
            for k in (0..n).filter(|k| k % stride == 0 || *k == n - 1) {
                let mut row = vec![trial.to_string(), (k as f64 * self.dt).to_string()];
                row.extend(path.iterate(k).iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Settings for [`deviation_ensemble`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub eta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub trials: usize,
    pub seed: u64,
    /// Keep the sample paths for export.
    pub keep_paths: bool,
}

/// Runs `trials` Euler–Maruyama paths of the scheme's SDE next to the
/// deterministic gradient flow from the same start. Member `t` uses stream `t`.
pub fn deviation_ensemble<O: Objective + ?Sized>(
    obj: &O,
    scheme: NoiseScheme,
    theta0: &[f64],
    spec: EnsembleSpec,
) -> Result<DeviationEnsemble> {
    check_dim(obj, theta0)?;
    let EnsembleSpec {
        eta,
        horizon,
        dt,
        trials,
        seed,
        keep_paths,
    } = spec;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be non-negative, got {eta}")));
    }
    if !(horizon > 0.0 && dt > 0.0 && dt <= horizon) {
        return Err(invalid("need 0 < dt ≤ T"));
    }
    if trials == 0 {
        return Err(invalid("ensemble needs at least one member"));
    }
    let steps = (horizon / dt).round() as usize;
    let drift = |t: &[f64]| full_gradient_unchecked(obj, t);
    let flow = euler_maruyama(
        drift,
        |_| DMatrix::zeros(theta0.len(), theta0.len()),
        theta0,
        dt,
        steps,
        seed,
    )?;
    let root_eta = eta.sqrt();
    let diffusion = |t: &[f64]| -> DMatrix<f64> {
        let cov = scheme.covariance(obj, t).expect("dimension checked");
        diffusion_factor(&cov) * root_eta
    };
    let members: Vec<Option<(f64, f64, Trajectory)>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let path = euler_maruyama_with(drift, diffusion, theta0, dt, steps, &mut rng).ok()?;
            let mut sup: f64 = 0.0;
            let mut integral = 0.0;
            for (k, (x, y)) in path.iterates().zip(flow.iterates()).enumerate() {
                let dev = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sup = sup.max(dev);
                if k < steps {
                    let tr = scheme.covariance(obj, x).expect("dimension checked").trace();
                    integral += eta * tr.max(0.0) * dt;
                }
            }
            Some((sup, integral, path))
        })
        .collect();
    let mut out = DeviationEnsemble {
        scheme,
        eta,
        horizon,
        dt,
        sup_deviation: Vec::with_capacity(trials),
        trace_integrals: Vec::with_capacity(trials),
        diverged: 0,
        paths: Vec::new(),
    };
    for m in members {
        match m {
            Some((sup, integral, path)) => {
                out.sup_deviation.push(sup);
                out.trace_integrals.push(integral);
                if keep_paths {
                    out.paths.push(path);
                }
            }
            None => {
                out.diverged += 1;
                out.sup_deviation.push(f64::INFINITY);
            }
        }
    }
    Ok(out)
}

/// Exceedance probability of radius `delta` and the trace-integral estimate.
pub fn estimate_deviation<O: Objective + ?Sized>(
    obj: &O,
    scheme: NoiseScheme,
    theta0: &[f64],
    spec: EnsembleSpec,
    delta: f64,
) -> Result<DeviationEstimate> {
    if !(delta > 0.0) {
        return Err(invalid(format!("delta must be positive, got {delta}")));
    }
    Ok(deviation_ensemble(
        obj,
        scheme,
        theta0,
        EnsembleSpec {
            keep_paths: false,
            ..spec
        },
    )?
    .estimate(delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{PiecewiseExample, QuadraticTerms};

    /// Terms `l_i(θ) = g_i·θ` with constant gradients.
    struct Linear(Vec<Vec<f64>>);

    impl Objective for Linear {
        fn dim(&self) -> usize {
            self.0[0].len()
        }
        fn n_terms(&self) -> usize {
            self.0.len()
        }
        fn term_value(&self, i: usize, t: &[f64]) -> f64 {
            self.0[i].iter().zip(t).map(|(a, b)| a * b).sum()
        }
        fn term_grad(&self, i: usize, _t: &[f64], g: &mut [f64]) {
            g.copy_from_slice(&self.0[i]);
        }
    }

    #[test]
    fn sgd_covariance_of_unit_vectors() {
        let obj = Linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = covariance_sgd(&obj, &[0.0, 0.0]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((s - expected).abs().max() < 1e-15);
    }

    #[test]
    fn rr_covariance_and_gap() {
        let obj = Linear(vec![vec![3.0, 0.0], vec![0.0, 1.0]]);
        let r = trace_gap(&obj, &[0.0, 0.0]).unwrap();
        assert!((r.trace2 - 1.5).abs() < 1e-14);
        assert!((r.trace1 - 2.5).abs() < 1e-14);
        assert!((r.gap - 1.0).abs() < 1e-14);
        assert!((r.gap - r.gap_from_norms).abs() < 1e-14);
        // C Σ w g gᵀ/‖g‖ = 2·diag(1.5, 0.5)
        let expected = DMatrix::from_row_slice(2, 2, &[3.0 - 2.25, -0.75, -0.75, 1.0 - 0.25]);
        assert!((&r.sigma2 - expected).abs().max() < 1e-14);
    }

    #[test]
    fn degenerate_covariances_vanish() {
        let one = Linear(vec![vec![1.0, -2.0]]);
        assert!(covariance_sgd(&one, &[0.0, 0.0]).unwrap().abs().max() < 1e-15);
        assert!(covariance_rr(&one, &[0.0, 0.0]).unwrap().abs().max() < 1e-15);
        let same = Linear(vec![vec![0.5, 1.0]; 4]);
        assert!(covariance_sgd(&same, &[0.0, 0.0]).unwrap().abs().max() < 1e-15);
        let zero = Linear(vec![vec![0.0, 0.0]; 3]);
        assert_eq!(covariance_rr(&zero, &[0.0, 0.0]).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn equal_norms_give_equal_covariances() {
        let obj = Linear(vec![vec![2.0, 0.0], vec![0.0, -2.0], vec![2f64.sqrt(), 2f64.sqrt()]]);
        let r = trace_gap(&obj, &[0.0, 0.0]).unwrap();
        assert!((&r.sigma1 - &r.sigma2).abs().max() < 1e-14);
        assert!(r.gap.abs() < 1e-14);
    }

    #[test]
    fn zero_gradients_keep_a_strict_gap() {
        let obj = Linear(vec![vec![1.0], vec![1.0], vec![0.0]]);
        let r = trace_gap(&obj, &[0.0]).unwrap();
        // k = 2 of n = 3 norms equal 1: gap = (k/n)(1 − k/n)
        assert!((r.gap - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn diffusion_factor_squares_back() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = diffusion_factor(&cov);
        assert!((&s * &s - &cov).abs().max() < 1e-12);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-13]);
        let s = diffusion_factor(&indefinite);
        assert!(s.iter().all(|x| x.is_finite()));
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12 && s[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn noiseless_path_is_explicit_euler() {
        let path = euler_maruyama(|t| vec![t[0]], |_| DMatrix::zeros(1, 1), &[1.0], 0.1, 10, 3).unwrap();
        for (k, x) in path.iterates().enumerate() {
            assert!((x[0] - 0.9f64.powi(k as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn pure_noise_step_is_the_drawn_normal() {
        let path = euler_maruyama(
            |_| vec![0.0, 0.0],
            |_| DMatrix::identity(2, 2),
            &[1.0, -1.0],
            1.0,
            1,
            11,
        )
        .unwrap();
        let mut rng = seeded(11);
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        assert!((path.iterate(1)[0] - 1.0 - a).abs() < 1e-15);
        assert!((path.iterate(1)[1] + 1.0 - b).abs() < 1e-15);
    }

    #[test]
    fn euler_maruyama_rejects_blowup() {
        let r = euler_maruyama(|t| vec![-1e300 * t[0]], |_| DMatrix::zeros(1, 1), &[1.0], 1.0, 5, 0);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn ou_stationary_variance() {
        let sigma = 0.8;
        let dt = 0.01;
        let path = euler_maruyama(
            |t| vec![t[0]],
            |_| DMatrix::from_element(1, 1, sigma),
            &[0.0],
            dt,
            100_000,
            5,
        )
        .unwrap();
        let xs: Vec<f64> = path.iterates().skip(1000).map(|x| x[0]).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        // discrete-time stationary variance of x' = (1-dt)x + σ√dt ξ
        let exact = sigma * sigma * dt / (1.0 - (1.0 - dt) * (1.0 - dt));
        assert!((exact - sigma * sigma / 2.0).abs() < 0.01);
        // autocorrelation time 1/dt inflates the standard error of the variance
        let tau = 1.0 / dt;
        let se = exact * (2.0 * tau / n).sqrt();
        assert!((var - sigma * sigma / 2.0).abs() < 3.0 * se, "var={var} se={se}");
    }

    #[test]
    fn ou_mean_decay() {
        let trials = 2000;
        let dt = 0.01;
        let steps = 100;
        let finals: Vec<f64> = (0..trials)
            .map(|t| {
                let mut rng = trial_rng(9, t);
                euler_maruyama_with(
                    |x| vec![x[0]],
                    |_| DMatrix::from_element(1, 1, 1.0),
                    &[1.0],
                    dt,
                    steps,
                    &mut rng,
                )
                .unwrap()
                .last()[0]
            })
            .collect();
        let (m, se) = mean_and_se(&finals);
        assert!((m - (-1.0f64).exp()).abs() < 3.0 * se + 1e-2 * dt, "m={m} se={se}");
    }

    /// `∫ exp(-c V)` over `[x0, x1]` where `V` is affine there.
    fn exact_segment(c: f64, v0: f64, v1: f64, x0: f64, x1: f64) -> f64 {
        let s = (v1 - v0) / (x1 - x0);
        if s == 0.0 {
            return (-c * v0).exp() * (x1 - x0);
        }
        ((-c * v0).exp() - (-c * v1).exp()) / (c * s)
    }

    #[test]
    fn density_matches_closed_form_masses() {
        let p = PiecewiseParams::new(0.3, 0.7, 0.35, 3.0).unwrap();
        let eta = 0.2;
        let dens = equilibrium_density(&p, eta, DensityGrid::default()).unwrap();
        let cl = 2.0 / (p.a1 * p.a2 * eta);
        let cr = cl / (p.k * p.k);
        let v = |t: f64| p.total(t);
        let (lo, hi, kink) = (-4.0, 3.0, 1.0 / p.k);
        let left = exact_segment(cl, v(lo), v(-1.0), lo, -1.0) + exact_segment(cl, v(-1.0), v(0.0), -1.0, 0.0);
        let right =
            (exact_segment(cr, v(0.0), v(kink), 0.0, kink) + exact_segment(cr, v(kink), v(hi), kink, hi)) / (p.k * p.k);
        let ratio = left / right;
        assert!((dens.basin_mass_ratio() / ratio - 1.0).abs() < 1e-6);
        assert!((dens.mass_left() + dens.mass_right() - 1.0).abs() < 1e-12);
        assert!((dens.side_ratio() - 9.0).abs() < 1e-9 * 9.0);
        assert!(dens.flux_mismatch() < 1e-9);
        assert!((dens.log_z2 - dens.log_z1 - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn standard_density_prefers_the_flat_side() {
        let dens = equilibrium_density(&PiecewiseParams::standard(), 0.04, DensityGrid::default()).unwrap();
        assert!((dens.side_ratio() - 25.0).abs() < 25.0 * 1e-9);
        assert!(dens.mass_left() > dens.mass_right());
        assert!(dens.basin_mass_ratio() > 1e20);
    }

    #[test]
    fn density_grid_errors() {
        let p = PiecewiseParams::standard();
        let narrow = DensityGrid {
            lo: -0.5,
            ..DensityGrid::default()
        };
        assert!(equilibrium_density(&p, 0.04, narrow).is_err());
        let coarse = DensityGrid {
            points_per_side: 11,
            ..DensityGrid::default()
        };
        assert!(matches!(
            equilibrium_density(&p, 0.04, coarse),
            Err(Error::GridTooCoarse(_))
        ));
        let short = DensityGrid {
            lo: -1.02,
            hi: 0.21,
            ..DensityGrid::default()
        };
        assert!(matches!(
            equilibrium_density(&p, 5.0, short),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn density_csv_header() {
        let p = PiecewiseParams::new(0.3, 0.7, 0.35, 3.0).unwrap();
        let grid = DensityGrid {
            points_per_side: 2001,
            self_check_tol: 1e-2,
            ..DensityGrid::default()
        };
        let dens = equilibrium_density(&p, 0.2, grid).unwrap();
        let mut buf = Vec::new();
        dens.write_csv(&mut buf, 100).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,p\n-4,"));
        assert_eq!(text.lines().count(), 1 + 21 + 21);
    }

    #[test]
    fn zero_step_size_never_deviates() {
        let obj = PiecewiseExample::new(PiecewiseParams::standard()).unwrap();
        let spec = EnsembleSpec {
            eta: 0.0,
            horizon: 1.0,
            dt: 0.01,
            trials: 20,
            seed: 1,
            keep_paths: false,
        };
        let est = estimate_deviation(&obj, NoiseScheme::Sgd, &[0.25], spec, 1e-9).unwrap();
        assert_eq!(est.empirical_prob, 0.0);
        assert_eq!(est.trace_integral, 0.0);
    }

    #[test]
    fn ensemble_is_reproducible_and_exceedance_monotone() {
        let q = QuadraticTerms::new(vec![1.0, 2.0, 0.5], vec![vec![1.0], vec![-1.0], vec![2.0]]).unwrap();
        let spec = EnsembleSpec {
            eta: 0.05,
            horizon: 2.0,
            dt: 0.01,
            trials: 64,
            seed: 4,
            keep_paths: true,
        };
        let a = deviation_ensemble(&q, NoiseScheme::Rr, &[0.0], spec).unwrap();
        let b = deviation_ensemble(&q, NoiseScheme::Rr, &[0.0], spec).unwrap();
        assert_eq!(a.sup_deviation, b.sup_deviation);
        let deltas = [0.01, 0.05, 0.1, 0.2, 0.5, 1e9];
        let probs: Vec<f64> = deltas.iter().map(|d| a.exceedance(*d)).collect();
        assert!(probs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*probs.last().unwrap(), 0.0);
        let mut buf = Vec::new();
        a.write_csv(&mut buf, 50).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("trial,t,theta_1\n0,0,0\n"));
    }
}
