//! Linear stability of SGD and RR around an interpolation solution, convergence
//! bound constants and empirical rate fits.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objective::{check_dim, full_gradient_unchecked, Objective};
use crate::rng::seeded;
use crate::samplers::Trajectory;

/// Per-sample feature maps `g_i = ∇_θ f(x_i, θ*)` at an interpolation point.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationModel {
    features: Vec<Vec<f64>>,
    theta_star: Vec<f64>,
}

impl InterpolationModel {
    pub fn new(features: Vec<Vec<f64>>, theta_star: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(invalid("model needs at least one sample"));
        }
        let d = theta_star.len();
        if let Some(bad) = features.iter().find(|g| g.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self { features, theta_star })
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }
}

/// `H_i = g_i g_iᵀ` and their mean `H`.
pub fn compute_h(model: &InterpolationModel) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let d = model.dim();
    let hs: Vec<DMatrix<f64>> = model
        .features
        .iter()
        .map(|g| {
            let v = DVector::from_column_slice(g);
            &v * v.transpose()
        })
        .collect();
    let h = mean_matrix(&hs, d);
    (hs, h)
}

fn mean_matrix(ms: &[DMatrix<f64>], d: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(d, d);
    for m in ms {
        h += m;
    }
    h / ms.len() as f64
}

fn lambda_max(m: DMatrix<f64>) -> f64 {
    let s = (&m + m.transpose()) * 0.5;
    if s.nrows() == 1 {
        return s[(0, 0)];
    }
    s.symmetric_eigenvalues().max()
}

fn deterministic_part(h: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    let a = DMatrix::identity(h.nrows(), h.ncols()) - h * eta;
    &a * &a
}

fn check_family(hs: &[DMatrix<f64>]) -> Result<usize> {
    let d = hs.first().ok_or_else(|| invalid("need at least one H_i"))?.nrows();
    if hs.iter().any(|h| h.nrows() != d || h.ncols() != d) {
        return Err(invalid("H_i must be square matrices of one size"));
    }
    Ok(d)
}

/// `λ_max[(I − ηH)² + η²((1/n)Σ H_i² − H²)]`; SGD is stable when this is at most 1.
pub fn sgd_stability_factor(hs: &[DMatrix<f64>], eta: f64) -> Result<f64> {
    let d = check_family(hs)?;
    let h = mean_matrix(hs, d);
    let sq: Vec<DMatrix<f64>> = hs.iter().map(|m| m * m).collect();
    let corr = mean_matrix(&sq, d) - &h * &h;
    Ok(lambda_max(deterministic_part(&h, eta) + corr * (eta * eta)))
}

/// Terms with `‖H_i u‖` below this are treated as inactive (probability 0).
const ACTIVE_GUARD: f64 = 1e-14;

/// `λ_max[(I − ηH)² + η²((1/n)Σ G̃_i H_i² − H²)]` with
/// `G̃_i = ((1/n)Σ_j ‖H_j u‖) / ‖H_i u‖`. Terms with `H_i u = 0` drop out of both
/// sums; the `1/n` keeps the full sample count.
pub fn rr_stability_factor(hs: &[DMatrix<f64>], eta: f64, u: &[f64]) -> Result<f64> {
    let d = check_family(hs)?;
    if u.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: u.len(),
        });
    }
    let u = DVector::from_column_slice(u);
    if (u.norm() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("direction must be a unit vector, norm {}", u.norm())));
    }
    let n = hs.len() as f64;
    let h = mean_matrix(hs, d);
    let norms: Vec<f64> = hs.iter().map(|m| (m * &u).norm()).collect();
    let mean_norm = norms.iter().filter(|x| **x > ACTIVE_GUARD).sum::<f64>() / n;
    let mut weighted = DMatrix::zeros(d, d);
    let mut any_active = false;
    for (m, &nr) in hs.iter().zip(&norms) {
        if nr > ACTIVE_GUARD {
            any_active = true;
            weighted += (m * m) * (mean_norm / nr);
        }
    }
    let det = deterministic_part(&h, eta);
    if !any_active {
        return Ok(lambda_max(det));
    }
    let corr = weighted / n - &h * &h;
    Ok(lambda_max(det + corr * (eta * eta)))
}

/// `count` unit directions drawn uniformly on the sphere from stream 0 of `seed`.
pub fn random_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let nr = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nr > 1e-12 {
            out.push(v.into_iter().map(|x| x / nr).collect());
        }
    }
    out
}

/// Largest RR factor over the given directions.
pub fn rr_worst_factor(hs: &[DMatrix<f64>], eta: f64, directions: &[Vec<f64>]) -> Result<f64> {
    if directions.is_empty() {
        return Err(invalid("need at least one direction"));
    }
    let mut worst = f64::NEG_INFINITY;
    for u in directions {
        worst = worst.max(rr_stability_factor(hs, eta, u)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StabilityScheme {
    Sgd,
    /// Worst case over the listed unit directions.
    Rr {
        directions: Vec<Vec<f64>>,
    },
}

impl StabilityScheme {
    pub fn factor(&self, hs: &[DMatrix<f64>], eta: f64) -> Result<f64> {
        match self {
            StabilityScheme::Sgd => sgd_stability_factor(hs, eta),
            StabilityScheme::Rr { directions } => rr_worst_factor(hs, eta, directions),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableEta {
    pub threshold: f64,
    /// False when no grid point is stable (`threshold` is then 0).
    pub found: bool,
}

const STABLE_SLACK: f64 = 1e-12;

/// Largest grid step with factor `≤ 1 + 1e-12`, refined by bisection against
/// the next grid point to `1e-6`.
pub fn max_stable_eta(hs: &[DMatrix<f64>], scheme: &StabilityScheme, grid: &[f64]) -> Result<StableEta> {
    if grid.is_empty() || grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("eta grid must be positive and strictly increasing"));
    }
    let stable = |eta: f64| -> Result<bool> { Ok(scheme.factor(hs, eta)? <= 1.0 + STABLE_SLACK) };
    let mut best = None;
    for (i, &eta) in grid.iter().enumerate().rev() {
        if stable(eta)? {
            best = Some(i);
            break;
        }
    }
    let Some(i) = best else {
        return Ok(StableEta {
            threshold: 0.0,
            found: false,
        });
    };
    let (mut lo, mut hi) = match grid.get(i + 1) {
        Some(&next) => (grid[i], next),
        None => {
            return Ok(StableEta {
                threshold: grid[i],
                found: true,
            })
        }
    };
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(StableEta {
        threshold: lo,
        found: true,
    })
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub h: DMatrix<f64>,
    pub h_terms: Vec<DMatrix<f64>>,
    /// `(η, λ_sgd, λ_rr_worst)` per grid point.
    pub rows: Vec<(f64, f64, f64)>,
    pub sgd_threshold: StableEta,
    pub rr_threshold: StableEta,
}

impl StabilityReport {
    /// `eta,lambda_sgd,lambda_rr_worst`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["eta", "lambda_sgd", "lambda_rr_worst"])?;
        for (eta, s, r) in &self.rows {
            w.write_record([eta.to_string(), s.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Factors of both schemes over `grid` and their stable thresholds. RR is
/// evaluated over `directions` (worst case).
pub fn stability_scan(model: &InterpolationModel, grid: &[f64], directions: &[Vec<f64>]) -> Result<StabilityReport> {
    let (hs, h) = compute_h(model);
    let rr = StabilityScheme::Rr {
        directions: directions.to_vec(),
    };
    let mut rows = Vec::with_capacity(grid.len());
    for &eta in grid {
        rows.push((eta, sgd_stability_factor(&hs, eta)?, rr.factor(&hs, eta)?));
    }
    Ok(StabilityReport {
        sgd_threshold: max_stable_eta(&hs, &StabilityScheme::Sgd, grid)?,
        rr_threshold: max_stable_eta(&hs, &rr, grid)?,
        h,
        h_terms: hs,
        rows,
    })
}

/// Leading coefficients of the local convergence bound
/// `E‖θ_k − θ*‖² ≲ coeff · k^{-p}` for both schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    pub alpha: f64,
    pub gamma: f64,
    pub offset: f64,
    pub power: f64,
    pub delta: f64,
    pub sigma_sup_sq: f64,
    pub sigma_mean_sq: f64,
    pub sgd_coefficient: f64,
    pub rr_coefficient: f64,
}

/// `p = 1`: `γ²σ²/((1−δ)(2αγ−1))`; `p < 1`: `γσ²/(2α(1−δ))`, with `σ² = sup σ_j²`
/// for SGD and `σ² = mean σ_j²` for RR.
pub fn convergence_constants(
    sigmas: &[f64],
    alpha: f64,
    gamma: f64,
    offset: f64,
    power: f64,
    delta: f64,
) -> Result<ConvergenceConstants> {
    if sigmas.is_empty() || sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(invalid("sigmas must be finite and non-negative"));
    }
    if !(alpha > 0.0 && gamma > 0.0 && offset >= 0.0) {
        return Err(invalid("need alpha > 0, gamma > 0, offset >= 0"));
    }
    if !(power > 0.5 && power <= 1.0) {
        return Err(invalid(format!("power must lie in (1/2, 1], got {power}")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(invalid(format!("delta must lie in [0, 1), got {delta}")));
    }
    let sq: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
    let sigma_sup_sq = sq.iter().copied().fold(0.0, f64::max);
    let sigma_mean_sq = sq.iter().sum::<f64>() / sq.len() as f64;
    let factor = if power == 1.0 {
        if 2.0 * alpha * gamma <= 1.0 {
            return Err(invalid(format!(
                "p = 1 needs 2·alpha·gamma > 1, got {}",
                2.0 * alpha * gamma
            )));
        }
        gamma * gamma / ((1.0 - delta) * (2.0 * alpha * gamma - 1.0))
    } else {
        gamma / (2.0 * alpha * (1.0 - delta))
    };
    Ok(ConvergenceConstants {
        alpha,
        gamma,
        offset,
        power,
        delta,
        sigma_sup_sq,
        sigma_mean_sq,
        sgd_coefficient: factor * sigma_sup_sq,
        rr_coefficient: factor * sigma_mean_sq,
    })
}

/// Central-difference Hessian of `L` built from full gradients, symmetrized.
pub fn finite_difference_hessian<O: Objective + ?Sized>(obj: &O, theta: &[f64], h: f64) -> Result<DMatrix<f64>> {
    check_dim(obj, theta)?;
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let d = obj.dim();
    let mut hess = DMatrix::zeros(d, d);
    let mut probe = theta.to_vec();
    for k in 0..d {
        probe[k] = theta[k] + h;
        let up = full_gradient_unchecked(obj, &probe);
        probe[k] = theta[k] - h;
        let down = full_gradient_unchecked(obj, &probe);
        probe[k] = theta[k];
        for r in 0..d {
            hess[(r, k)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Smallest eigenvalue of the finite-differenced Hessian of `L` at `theta`.
pub fn estimate_alpha<O: Objective + ?Sized>(obj: &O, theta: &[f64], h: f64) -> Result<f64> {
    let hess = finite_difference_hessian(obj, theta, h)?;
    if hess.nrows() == 1 {
        return Ok(hess[(0, 0)]);
    }
    Ok(hess.symmetric_eigenvalues().min())
}

/// Per-term gradient norms `‖∇l_j(θ*)‖`, the noise levels `σ_j` at the minimizer.
pub fn noise_levels<O: Objective + ?Sized>(obj: &O, theta_star: &[f64]) -> Result<Vec<f64>> {
    check_dim(obj, theta_star)?;
    let mut g = vec![0.0; obj.dim()];
    Ok((0..obj.n_terms())
        .map(|i| {
            obj.term_grad(i, theta_star, &mut g);
            g.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect())
}

/// Least-squares fit of `log E‖θ_k − θ*‖²` against `log k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    /// Number of `k` values in the regression.
    pub points: usize,
    /// Trials used after discarding those that left the ball.
    pub trials: usize,
}

impl RateFit {
    /// Decay clearly faster than `k^{-p}`: slope below `−p − 0.5`.
    pub fn faster_than_bound(&self, p: f64) -> bool {
        self.slope < -p - 0.5
    }
}

pub const MIN_RATE_TRIALS: usize = 30;

/// Fit over up to 64 log-spaced `k` in `k_range` (inclusive).
pub fn empirical_rate_fit(trials: &[Trajectory], theta_star: &[f64], k_range: (usize, usize)) -> Result<RateFit> {
    empirical_rate_fit_within(trials, theta_star, k_range, f64::INFINITY)
}

/// Like [`empirical_rate_fit`], keeping only trials that stay within `radius`
/// of `θ*` over the whole trajectory.
pub fn empirical_rate_fit_within(
    trials: &[Trajectory],
    theta_star: &[f64],
    k_range: (usize, usize),
    radius: f64,
) -> Result<RateFit> {
    let (k0, k1) = k_range;
    if !(k0 >= 1 && k1 > k0) {
        return Err(invalid(format!("k range must satisfy 1 <= k0 < k1, got {k_range:?}")));
    }
    let dist2 = |x: &[f64]| -> f64 { x.iter().zip(theta_star).map(|(a, b)| (a - b) * (a - b)).sum() };
    let kept: Vec<&Trajectory> = trials
        .iter()
        .filter(|t| !t.diverged() && t.iterates().all(|x| dist2(x) <= radius * radius))
        .collect();
    if kept.len() < MIN_RATE_TRIALS {
        return Err(invalid(format!(
            "need at least {MIN_RATE_TRIALS} usable trials, got {}",
            kept.len()
        )));
    }
    if let Some(t) = kept.iter().find(|t| t.len() <= k1) {
        return Err(invalid(format!(
            "trajectory of length {} does not reach k = {k1}",
            t.len()
        )));
    }
    if let Some(t) = kept.iter().find(|t| t.dim() != theta_star.len()) {
        return Err(Error::DimensionMismatch {
            expected: theta_star.len(),
            got: t.dim(),
        });
    }
    let mut ks: Vec<usize> = (0..64)
        .map(|i| {
            ((k0 as f64).ln() + ((k1 as f64).ln() - (k0 as f64).ln()) * i as f64 / 63.0)
                .exp()
                .round() as usize
        })
        .collect();
    ks.dedup();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &k in &ks {
        let m = kept.iter().map(|t| dist2(t.iterate(k))).sum::<f64>() / kept.len() as f64;
        if m > 0.0 && m.is_finite() {
            xs.push((k as f64).ln());
            ys.push(m.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Degenerate(
            "mean squared distances vanish over the k range".into(),
        ));
    }
    let (slope, intercept, slope_se, intercept_se) = ols(&xs, &ys);
    Ok(RateFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        points: xs.len(),
        trials: kept.len(),
    })
}

/// Ordinary least squares `y = a x + b` with standard errors.
fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a * x - b).powi(2)).sum();
    let s2 = if xs.len() > 2 { rss / (n - 2.0) } else { 0.0 };
    let se_a = (s2 / sxx).sqrt();
    let se_b = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    (a, b, se_a, se_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::QuadraticTerms;
    use crate::samplers::{run_trajectory, Method, StepSchedule};

    fn scalar_family(h: &[f64]) -> Vec<DMatrix<f64>> {
        h.iter().map(|x| DMatrix::from_element(1, 1, *x)).collect()
    }

    #[test]
    fn h_of_unit_feature() {
        let m = InterpolationModel::new(vec![vec![1.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let (hs, h) = compute_h(&m);
        assert_eq!(hs[0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(h, hs[0]);
        let m = InterpolationModel::new(vec![vec![1.0], vec![3.0]], vec![0.0]).unwrap();
        let (hs, h) = compute_h(&m);
        assert_eq!((hs[0][(0, 0)], hs[1][(0, 0)], h[(0, 0)]), (1.0, 9.0, 5.0));
        assert!(InterpolationModel::new(vec![vec![1.0, 2.0]], vec![0.0]).is_err());
    }

    #[test]
    fn sgd_factor_matches_hand_formula() {
        let hs = scalar_family(&[1.0, 9.0]);
        for eta in [0.0f64, 0.05, 0.1, 0.2439, 0.3] {
            let hand = (1.0 - 5.0 * eta).powi(2) + 16.0 * eta * eta;
            assert!((sgd_stability_factor(&hs, eta).unwrap() - hand).abs() < 1e-12);
        }
        assert_eq!(sgd_stability_factor(&hs, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn one_dimensional_rr_correction_vanishes() {
        let hs = scalar_family(&[0.3, 1.7, 4.0, 0.0]);
        let h = (0.3 + 1.7 + 4.0) / 4.0;
        for eta in [0.1, 0.4, 0.9] {
            let f = rr_stability_factor(&hs, eta, &[1.0]).unwrap();
            assert!((f - (1.0 - eta * h).powi(2)).abs() < 1e-12);
            // u = -1 is the same direction up to sign
            assert!((rr_stability_factor(&hs, eta, &[-1.0]).unwrap() - f).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_terms_make_schemes_coincide() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let hs = vec![g.clone(); 3];
        let u = random_directions(2, 5, 1);
        for eta in [0.1, 0.5, 0.8] {
            let s = sgd_stability_factor(&hs, eta).unwrap();
            for dir in &u {
                assert!((rr_stability_factor(&hs, eta, dir).unwrap() - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rr_rejects_non_unit_direction() {
        let hs = scalar_family(&[1.0]);
        assert!(rr_stability_factor(&hs, 0.1, &[2.0]).is_err());
        assert!(rr_stability_factor(&hs, 0.1, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn null_direction_keeps_deterministic_part() {
        let hs = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])];
        let f = rr_stability_factor(&hs, 0.5, &[0.0, 1.0]).unwrap();
        // (I − ηH)² has eigenvalues 1 and 0.25
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thresholds_for_one_and_nine() {
        let hs = scalar_family(&[1.0, 9.0]);
        let grid = linear_grid(0.01, 1.0, 100);
        let sgd = max_stable_eta(&hs, &StabilityScheme::Sgd, &grid).unwrap();
        assert!(sgd.found && (sgd.threshold - 10.0 / 41.0).abs() < 1e-6);
        let rr = max_stable_eta(
            &hs,
            &StabilityScheme::Rr {
                directions: vec![vec![1.0]],
            },
            &grid,
        )
        .unwrap();
        assert!(rr.found && (rr.threshold - 0.4).abs() < 1e-6);
    }

    #[test]
    fn equal_terms_threshold_is_two_over_h() {
        let hs = scalar_family(&[2.5, 2.5]);
        let grid = linear_grid(0.05, 2.0, 40);
        let t = max_stable_eta(&hs, &StabilityScheme::Sgd, &grid).unwrap();
        assert!((t.threshold - 0.8).abs() < 1e-6);
    }

    #[test]
    fn nothing_stable_is_flagged() {
        let hs = scalar_family(&[100.0]);
        let t = max_stable_eta(&hs, &StabilityScheme::Sgd, &[0.5, 1.0]).unwrap();
        assert_eq!(
            t,
            StableEta {
                threshold: 0.0,
                found: false
            }
        );
        assert!(max_stable_eta(&hs, &StabilityScheme::Sgd, &[0.5, 0.4]).is_err());
    }

    #[test]
    fn scan_csv() {
        let m = InterpolationModel::new(vec![vec![1.0], vec![3.0]], vec![0.0]).unwrap();
        let report = stability_scan(&m, &[0.1, 0.2], &[vec![1.0]]).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("eta,lambda_sgd,lambda_rr_worst\n0.1,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn coefficients_for_one_one_ten() {
        let c = convergence_constants(&[1.0, 1.0, 10.0], 1.0, 1.0, 0.0, 1.0, 0.1).unwrap();
        assert_eq!(c.sigma_sup_sq, 100.0);
        assert_eq!(c.sigma_mean_sq, 34.0);
        assert!((c.rr_coefficient / c.sgd_coefficient - 0.34).abs() < 1e-15);
        let c = convergence_constants(&[2.0; 4], 1.0, 3.0, 0.0, 0.7, 0.0).unwrap();
        assert_eq!(c.sgd_coefficient, c.rr_coefficient);
        assert!((c.sgd_coefficient - 3.0 * 4.0 / 2.0).abs() < 1e-15);
        assert!(convergence_constants(&[1.0], 0.5, 1.0, 0.0, 1.0, 0.0).is_err());
        let near = convergence_constants(&[1.0], 1.0, 1.0, 0.0, 1.0, 1.0 - 1e-9).unwrap();
        assert!(near.sgd_coefficient > 1e8);
    }

    #[test]
    fn alpha_of_quadratic() {
        let q = QuadraticTerms::new(vec![1.0, 3.0], vec![vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let a = estimate_alpha(&q, &[0.3, 0.2], 1e-4).unwrap();
        assert!((a - 2.0).abs() < 1e-8);
    }

    #[test]
    fn noiseless_descent_is_faster_than_bound() {
        let q = QuadraticTerms::new(vec![1.0], vec![vec![0.0]]).unwrap();
        let sched = StepSchedule::Constant { eta: 0.01 };
        let trials: Vec<Trajectory> = (0..30)
            .map(|s| run_trajectory(&q, &Method::Sgd, &[1.0], &sched, 2000, s).unwrap())
            .collect();
        let fit = empirical_rate_fit(&trials, &[0.0], (100, 2000)).unwrap();
        assert!(fit.faster_than_bound(1.0), "slope {}", fit.slope);
        assert!(empirical_rate_fit(&trials[..10], &[0.0], (100, 2000)).is_err());
        assert!(empirical_rate_fit(&trials, &[0.0], (100, 5000)).is_err());
    }

    #[test]
    fn exact_zero_distances_are_degenerate() {
        let q = QuadraticTerms::new(vec![1.0], vec![vec![0.0]]).unwrap();
        let sched = StepSchedule::Constant { eta: 1.0 };
        let trials: Vec<Trajectory> = (0..30)
            .map(|s| run_trajectory(&q, &Method::Sgd, &[1.0], &sched, 50, s).unwrap())
            .collect();
        assert!(matches!(
            empirical_rate_fit(&trials, &[0.0], (1, 40)),
            Err(Error::Degenerate(_))
        ));
    }
}
