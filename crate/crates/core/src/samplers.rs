//! SGD and resampling-reweighting (RR) updates, step-size schedules and
//! trajectory execution.
//!
//! Every step consumes exactly one uniform `f64` from the trajectory's stream
//! for the index draw, so a trajectory is a pure function of its seed.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objective::{check_dim, gradient_profile_unchecked, Objective};
use crate::rng::{seeded, StreamRng};

/// Step-size schedule `η_k`, evaluated for steps `k = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `γ / (k + m)^p` with `p ∈ (1/2, 1]`.
    PowerLaw {
        gamma: f64,
        offset: f64,
        power: f64,
    },
    /// Linear interpolation from `start` at step 1 to `end` at step `steps`.
    LinearDecay {
        start: f64,
        end: f64,
        steps: usize,
    },
    /// Geometric interpolation from `start` at step 1 to `end` at step `steps`.
    GeometricDecay {
        start: f64,
        end: f64,
        steps: usize,
    },
}

impl StepSchedule {
    pub fn constant(eta: f64) -> Result<Self> {
        let s = Self::Constant { eta };
        s.validate()?;
        Ok(s)
    }

    pub fn power_law(gamma: f64, offset: f64, power: f64) -> Result<Self> {
        let s = Self::PowerLaw { gamma, offset, power };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant { eta } => {
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(invalid(format!("step size must be finite and non-negative, got {eta}")));
                }
            }
            Self::PowerLaw { gamma, offset, power } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(invalid(format!("gamma must be positive, got {gamma}")));
                }
                if !(offset >= 0.0 && offset.is_finite()) {
                    return Err(invalid(format!("offset must be non-negative, got {offset}")));
                }
                if !(power > 0.5 && power <= 1.0) {
                    return Err(invalid(format!("power must lie in (1/2, 1], got {power}")));
                }
            }
            Self::LinearDecay { start, end, steps } | Self::GeometricDecay { start, end, steps } => {
                if !(start > 0.0 && end > 0.0 && start.is_finite() && end.is_finite()) {
                    return Err(invalid("decay endpoints must be positive"));
                }
                if steps == 0 {
                    return Err(invalid("decay length must be at least one step"));
                }
            }
        }
        Ok(())
    }

    /// `η_k`. Decays hold their end value past `steps`.
    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            Self::Constant { eta } => eta,
            Self::PowerLaw { gamma, offset, power } => gamma / (k as f64 + offset).powf(power),
            Self::LinearDecay { start, end, steps } => start + (end - start) * decay_fraction(k, steps),
            Self::GeometricDecay { start, end, steps } => start * (end / start).powf(decay_fraction(k, steps)),
        }
    }
}

fn decay_fraction(k: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return 1.0;
    }
    (k.clamp(1, steps) - 1) as f64 / (steps - 1) as f64
}

/// Resampling proportions `f_j` and reweighting factors `w_j = a_j / f_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResamplingPlan {
    proportions: Vec<f64>,
    weights: Vec<f64>,
}

impl GroupResamplingPlan {
    /// Plan drawing group `j` with probability `f[j]` for populations `a`.
    pub fn new(a: &[f64], f: &[f64]) -> Result<Self> {
        if a.len() != f.len() || a.is_empty() {
            return Err(invalid("plan needs one proportion per group"));
        }
        if f.iter().chain(a).any(|x| !(*x > 0.0 && *x <= 1.0)) {
            return Err(invalid("proportions must lie in (0, 1]"));
        }
        for (name, v) in [("population", a), ("resampling", f)] {
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("{name} proportions sum to {s}, not 1")));
            }
        }
        Ok(Self {
            proportions: f.to_vec(),
            weights: a.iter().zip(f).map(|(a, f)| a / f).collect(),
        })
    }

    /// `f = a`: every weight is one and the scheme is group-level SGD.
    pub fn identity(a: &[f64]) -> Result<Self> {
        Self::new(a, a)
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check_against<O: Objective + ?Sized>(&self, obj: &O) -> Result<()> {
        if self.len() != obj.n_terms() {
            return Err(invalid(format!(
                "plan has {} groups but objective has {}",
                self.len(),
                obj.n_terms()
            )));
        }
        for j in 0..self.len() {
            let a = obj.weight(j);
            if (self.weights[j] * self.proportions[j] - a).abs() > 1e-12 {
                return Err(invalid(format!(
                    "plan population for group {j} does not match objective weight {a}"
                )));
            }
        }
        Ok(())
    }
}

/// Variance-balancing plan for the two-group piecewise example:
/// `f1 = a1/(a1 + K a2)`, `f2 = K a2/(a1 + K a2)`.
pub fn balancing_plan(a1: f64, a2: f64, k: f64) -> Result<GroupResamplingPlan> {
    if !(a1 > 0.0 && a2 > 0.0 && (a1 + a2 - 1.0).abs() <= 1e-12) {
        return Err(invalid(format!("invalid proportions a1={a1}, a2={a2}")));
    }
    if !(k >= 1.0 && k.is_finite()) {
        return Err(invalid(format!("K must be at least 1, got {k}")));
    }
    let denom = a1 + k * a2;
    let f1 = a1 / denom;
    let f2 = k * a2 / denom;
    Ok(GroupResamplingPlan {
        proportions: vec![f1, f2],
        weights: vec![a1 / f1, a2 / f2],
    })
}

/// Draws an index from unnormalised non-negative `mass` (total `total`) using a
/// single uniform. Zero-mass entries are never returned.
pub(crate) fn draw_categorical(mass: &[f64], total: f64, rng: &mut StreamRng) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn draw_term<O: Objective + ?Sized>(obj: &O, rng: &mut StreamRng) -> usize {
    match obj.weights() {
        Some(w) => draw_categorical(w, w.iter().sum(), rng),
        None => {
            let n = obj.n_terms();
            ((rng.random::<f64>() * n as f64) as usize).min(n - 1)
        }
    }
}

/// Vanilla SGD: `j` drawn with the objective's weights (uniform by default),
/// `θ' = θ − η∇l_j(θ)`.
pub fn sgd_step<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    eta: f64,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, usize)> {
    check_dim(obj, theta)?;
    Ok(sgd_step_unchecked(obj, theta, eta, rng))
}

fn sgd_step_unchecked<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    eta: f64,
    rng: &mut StreamRng,
) -> (Vec<f64>, usize) {
    let j = draw_term(obj, rng);
    let mut g = vec![0.0; obj.dim()];
    obj.term_grad(j, theta, &mut g);
    let next = theta.iter().zip(&g).map(|(t, g)| t - eta * g).collect();
    (next, j)
}

/// RR step: `j` drawn with probability `∝ w_j‖∇l_j(θ)‖` and
/// `θ' = θ − η (C/‖∇l_j‖) ∇l_j(θ)`. The identity when every gradient vanishes.
pub fn rr_step<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    eta: f64,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, usize)> {
    check_dim(obj, theta)?;
    Ok(rr_step_unchecked(obj, theta, eta, rng))
}

fn rr_step_unchecked<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    eta: f64,
    rng: &mut StreamRng,
) -> (Vec<f64>, usize) {
    let profile = gradient_profile_unchecked(obj, theta);
    if profile.probs.is_empty() {
        // consume the draw anyway so streams stay aligned across methods
        let _ = rng.random::<f64>();
        return (theta.to_vec(), 0);
    }
    let j = draw_categorical(&profile.probs, 1.0, rng);
    let scale = eta * profile.c / profile.norms[j];
    let next = theta.iter().zip(profile.grad(j)).map(|(t, g)| t - scale * g).collect();
    (next, j)
}

/// Group-level RR: group `j` drawn with probability `f_j`, update with the
/// gradient of `w_j V_j`. `obj` must be the group view (terms are groups,
/// weights are the population proportions `a_j`).
pub fn grouped_rr_step<O: Objective + ?Sized>(
    obj: &O,
    plan: &GroupResamplingPlan,
    theta: &[f64],
    eta: f64,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, usize)> {
    check_dim(obj, theta)?;
    plan.check_against(obj)?;
    Ok(grouped_rr_step_unchecked(obj, plan, theta, eta, rng))
}

fn grouped_rr_step_unchecked<O: Objective + ?Sized>(
    obj: &O,
    plan: &GroupResamplingPlan,
    theta: &[f64],
    eta: f64,
    rng: &mut StreamRng,
) -> (Vec<f64>, usize) {
    let j = draw_categorical(&plan.proportions, 1.0, rng);
    let mut g = vec![0.0; obj.dim()];
    obj.term_grad(j, theta, &mut g);
    let w = plan.weights[j];
    let next = theta.iter().zip(&g).map(|(t, g)| t - eta * w * g).collect();
    (next, j)
}

/// Trace of the covariance of the reweighted group gradient `w_j ∇V_j` under
/// the plan's categorical draw.
pub fn grouped_gradient_variance<O: Objective + ?Sized>(
    obj: &O,
    plan: &GroupResamplingPlan,
    theta: &[f64],
) -> Result<f64> {
    check_dim(obj, theta)?;
    plan.check_against(obj)?;
    let d = obj.dim();
    let mut grads = vec![vec![0.0; d]; plan.len()];
    for (j, g) in grads.iter_mut().enumerate() {
        obj.term_grad(j, theta, g);
        let w = plan.weights[j];
        g.iter_mut().for_each(|x| *x *= w);
    }
    let mut mean = vec![0.0; d];
    for (g, f) in grads.iter().zip(&plan.proportions) {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += f * x;
        }
    }
    Ok(grads
        .iter()
        .zip(&plan.proportions)
        .map(|(g, f)| f * g.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum())
}

/// Variance of the reweighted update direction `w_j V_j'` under the plan, in
/// the two regions of the piecewise example: `(-1, 0)` and `(0, 1/K)`.
///
/// Uses the region's gradient table directly, so `ε = 0` is allowed.
pub fn regional_update_variances(eps: f64, k: f64, plan: &GroupResamplingPlan) -> Result<[f64; 2]> {
    if plan.len() != 2 {
        return Err(invalid("regional variances need a two-group plan"));
    }
    if !(eps >= 0.0 && k > 0.0) {
        return Err(invalid("need eps >= 0 and K > 0"));
    }
    // (V1', V2') on each region
    let tables = [[1.0, -eps], [eps, -k]];
    Ok(tables.map(|g| categorical_variance(&[plan.weights[0] * g[0], plan.weights[1] * g[1]], &plan.proportions)))
}

fn categorical_variance(values: &[f64], probs: &[f64]) -> f64 {
    let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
    values.iter().zip(probs).map(|(v, p)| p * (v - mean) * (v - mean)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Rr,
    GroupedRr { plan: GroupResamplingPlan },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Rr => "rr",
            Method::GroupedRr { .. } => "grouped_rr",
        }
    }

    /// One update with this method.
    pub fn step<O: Objective + ?Sized>(
        &self,
        obj: &O,
        theta: &[f64],
        eta: f64,
        rng: &mut StreamRng,
    ) -> Result<(Vec<f64>, usize)> {
        match self {
            Method::Sgd => sgd_step(obj, theta, eta, rng),
            Method::Rr => rr_step(obj, theta, eta, rng),
            Method::GroupedRr { plan } => grouped_rr_step(obj, plan, theta, eta, rng),
        }
    }
}

/// Iterates `θ_0..θ_N` with the index drawn and step size used at each step.
///
/// For SDE paths `indices` is empty and `etas` holds the time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    states: Vec<f64>,
    pub indices: Vec<usize>,
    pub etas: Vec<f64>,
    pub seed: u64,
    /// Step at which a non-finite iterate appeared; the iterate itself is not stored.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn new(theta0: &[f64], seed: u64) -> Self {
        Self {
            dim: theta0.len(),
            states: theta0.to_vec(),
            indices: Vec::new(),
            etas: Vec::new(),
            seed,
            diverged_at: None,
        }
    }

    pub(crate) fn push(&mut self, theta: &[f64], eta: f64, index: Option<usize>) {
        debug_assert_eq!(theta.len(), self.dim);
        self.states.extend_from_slice(theta);
        self.etas.push(eta);
        if let Some(j) = index {
            self.indices.push(j);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored iterates (`steps + 1` unless the run diverged).
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iterate(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.iterate(self.len() - 1)
    }

    pub fn iterates(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.states.chunks_exact(self.dim)
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// `k,eta,j,theta_1..theta_d`; row `k` holds `θ_k` and the step applied to
    /// it (empty on the final row, and `j` empty for SDE paths).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_csv_strided(out, 1)
    }

    pub fn write_csv_strided<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["k".to_string(), "eta".to_string(), "j".to_string()];
        header.extend((1..=self.dim).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        let n = self.len();
        for k in (0..n).filter(|k| k % stride == 0 || *k == n - 1) {
            let mut row = vec![
                k.to_string(),
                self.etas.get(k).map(f64::to_string).unwrap_or_default(),
                self.indices.get(k).map(usize::to_string).unwrap_or_default(),
            ];
            row.extend(self.iterate(k).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `steps` updates from `theta0` on stream 0 of `seed`.
pub fn run_trajectory<O: Objective + ?Sized>(
    obj: &O,
    method: &Method,
    theta0: &[f64],
    schedule: &StepSchedule,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = seeded(seed);
    let mut traj = run_trajectory_with(obj, method, theta0, schedule, steps, &mut rng)?;
    traj.seed = seed;
    Ok(traj)
}

/// Like [`run_trajectory`] with a caller-provided stream. A non-finite iterate
/// stops the run and is recorded in [`Trajectory::diverged_at`].
pub fn run_trajectory_with<O: Objective + ?Sized>(
    obj: &O,
    method: &Method,
    theta0: &[f64],
    schedule: &StepSchedule,
    steps: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    check_dim(obj, theta0)?;
    schedule.validate()?;
    if theta0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    if let Method::GroupedRr { plan } = method {
        plan.check_against(obj)?;
    }
    let mut traj = Trajectory::new(theta0, 0);
    traj.states.reserve(steps * obj.dim());
    let mut theta = theta0.to_vec();
    for k in 1..=steps {
        let eta = schedule.eta(k);
        let (next, j) = match method {
            Method::Sgd => sgd_step_unchecked(obj, &theta, eta, rng),
            Method::Rr => rr_step_unchecked(obj, &theta, eta, rng),
            Method::GroupedRr { plan } => grouped_rr_step_unchecked(obj, plan, &theta, eta, rng),
        };
        if next.iter().any(|x| !x.is_finite()) {
            traj.diverged_at = Some(k);
            break;
        }
        traj.push(&next, eta, Some(j));
        theta = next;
    }
    Ok(traj)
}
