//! Experiment execution and output files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rrsgd::analysis::{linear_grid, random_directions, stability_scan, InterpolationModel, StabilityReport, StableEta};
use rrsgd::losses::muller_brown::{locate_global_minimum, SearchBox};
use rrsgd::losses::welsch::{synthesize_classification_data, synthesize_regression_data};
use rrsgd::losses::{
    GaussianSystem, GaussianSystemParams, LinearLeastSquares, MullerBrown, MullerBrownParams, PiecewiseExample,
    WelschDataset, WelschObjective,
};
use rrsgd::rng::trial_rng;
use rrsgd::samplers::{balancing_plan, run_trajectory_with, GroupResamplingPlan};
use rrsgd::sde::{
    deviation_ensemble, equilibrium_density, DeviationEnsemble, EnsembleSpec, EquilibriumDensity1D, NoiseScheme,
};
use rrsgd::{value, Method, Objective, StepSchedule, Trajectory};

use crate::config::{Basin, ExperimentConfig, ExperimentId, MethodName};
use crate::error::{config_err, HarnessError, Result};
use crate::stats::{
    accumulate, aggregate_trials, basin_occupancy, check_basins, empty_histogram, normalize, tail_start, Histogram,
};

/// Per-trial outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub method: MethodName,
    pub eta: f64,
    pub trial: usize,
    /// Loss at the last finite iterate.
    pub final_loss: f64,
    pub final_theta: Vec<f64>,
    /// Post-burn-in occupancy of each configured basin.
    pub basin_fractions: Vec<f64>,
    /// Basin holding the final iterate.
    pub final_basin: Option<usize>,
    pub diverged_at: Option<usize>,
    /// Loss at the recorded steps (`loss_steps` of the report).
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CurveStats {
    pub method: MethodName,
    pub eta: f64,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Non-diverged trials that entered the aggregate.
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct SecondMoment {
    pub scheme: MethodName,
    pub factor: f64,
    pub eta: f64,
    /// `E‖θ_N − θ*‖² / ‖θ_0 − θ*‖²` over the trials.
    pub ratio: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone)]
pub struct StabilityOutcome {
    pub report: StabilityReport,
    pub moments: Vec<SecondMoment>,
}

impl StabilityOutcome {
    pub fn threshold(&self, scheme: MethodName) -> StableEta {
        match scheme {
            MethodName::Rr => self.report.rr_threshold,
            _ => self.report.sgd_threshold,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdeOutcome {
    pub density: EquilibriumDensity1D,
    pub ensembles: Vec<DeviationEnsemble>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: ExperimentId,
    pub dir: PathBuf,
    pub trials: Vec<TrialSummary>,
    pub curves: Vec<CurveStats>,
    pub histograms: Vec<(MethodName, f64, Histogram)>,
    pub basins: Vec<Basin>,
    pub stability: Option<StabilityOutcome>,
    pub sde: Option<SdeOutcome>,
}

impl RunReport {
    pub fn diverged(&self) -> usize {
        self.trials.iter().filter(|t| t.diverged_at.is_some()).count()
    }

    pub fn trials_for(&self, method: MethodName) -> impl Iterator<Item = &TrialSummary> {
        self.trials.iter().filter(move |t| t.method == method)
    }
}

/// Runs `cfg`, writing all outputs into `out`. Fails with
/// [`HarnessError::AllDiverged`] after writing when no trial stayed finite.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), cfg.to_json_pretty())?;
    let report = match cfg.experiment {
        ExperimentId::StabilityScan => run_stability(cfg, out)?,
        ExperimentId::SdeStudy => run_sde(cfg, out)?,
        _ => run_trajectories(cfg, out)?,
    };
    if !report.trials.is_empty() && report.diverged() == report.trials.len() {
        return Err(HarnessError::AllDiverged(report.trials.len()));
    }
    Ok(report)
}

/// Start-point rule.
enum Init {
    Fixed(Vec<f64>),
    /// `center + offset·e + noise·N(0, I)`, drawn from the head of the trial stream.
    Perturbed {
        center: Vec<f64>,
        offset: f64,
        noise: f64,
    },
}

struct Problem {
    objective: Box<dyn Objective>,
    init: Init,
    basins: Vec<Basin>,
    plan: Option<GroupResamplingPlan>,
    data: Option<WelschDataset>,
    reference: Vec<(String, String)>,
}

fn fixed_start(cfg: &ExperimentConfig, default: &[f64]) -> Init {
    if cfg.theta0.is_empty() {
        Init::Fixed(default.to_vec())
    } else {
        Init::Fixed(cfg.theta0.clone())
    }
}

fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let mut basins = cfg.basins.clone();
    let mut reference = Vec::new();
    let problem = match cfg.experiment {
        ExperimentId::Piecewise => {
            let params = cfg.piecewise.expect("validated");
            Problem {
                objective: Box::new(PiecewiseExample::new(params)?),
                init: fixed_start(cfg, &[0.25]),
                basins,
                plan: Some(balancing_plan(params.a1, params.a2, params.k)?),
                data: None,
                reference,
            }
        }
        ExperimentId::WelschClassify => {
            let w = cfg.welsch.as_ref().expect("validated");
            let data = synthesize_classification_data(w.data_seed);
            Problem {
                objective: Box::new(WelschObjective::new(data.clone())?),
                init: fixed_start(cfg, &[-0.5]),
                basins,
                plan: None,
                data: Some(data),
                reference,
            }
        }
        ExperimentId::WelschRegress => {
            let w = cfg.welsch.as_ref().expect("validated");
            let reg = synthesize_regression_data(w.data_seed);
            for (i, b) in reg.beta_star.iter().enumerate() {
                reference.push((format!("beta_star_{}", i + 1), b.to_string()));
            }
            let init = if cfg.theta0.is_empty() {
                Init::Perturbed {
                    center: reg.beta_star.clone(),
                    offset: w.init_offset,
                    noise: w.init_noise,
                }
            } else {
                Init::Fixed(cfg.theta0.clone())
            };
            Problem {
                objective: Box::new(WelschObjective::new(reg.dataset.clone())?),
                init,
                basins,
                plan: None,
                data: Some(reg.dataset),
                reference,
            }
        }
        ExperimentId::MullerBrown => {
            let m = cfg.muller_brown.as_ref().expect("validated");
            if !(m.scale > 0.0 && m.basin_radius > 0.0) {
                return Err(config_err("`muller_brown.scale` and `basin_radius` must be positive"));
            }
            let params = MullerBrownParams::standard(m.scale);
            let min = locate_global_minimum(&params, SearchBox::default());
            reference.push(("global_min_x".into(), min.point[0].to_string()));
            reference.push(("global_min_y".into(), min.point[1].to_string()));
            reference.push(("global_min_potential".into(), min.potential.to_string()));
            basins.insert(
                0,
                Basin::Ball {
                    center: min.point.to_vec(),
                    radius: m.basin_radius,
                },
            );
            Problem {
                objective: Box::new(MullerBrown::new(params)),
                init: fixed_start(cfg, &[-0.8, 1.0]),
                basins,
                plan: None,
                data: None,
                reference,
            }
        }
        ExperimentId::GaussianSystem => {
            let g = cfg.gaussian.as_ref().expect("validated");
            let params = GaussianSystemParams::scheduled(g.atoms, g.free_atom)?;
            Problem {
                objective: Box::new(GaussianSystem::new(&params)?),
                init: fixed_start(cfg, &[3.0, 1.0]),
                basins,
                plan: None,
                data: None,
                reference,
            }
        }
        ExperimentId::StabilityScan | ExperimentId::SdeStudy => {
            return Err(config_err(format!("{} is not a trajectory experiment", cfg.experiment)))
        }
    };
    Ok(problem)
}

fn method_for(name: MethodName, plan: Option<&GroupResamplingPlan>, id: ExperimentId) -> Result<Method> {
    Ok(match name {
        MethodName::Sgd => Method::Sgd,
        MethodName::Rr => Method::Rr,
        MethodName::GroupedRr => Method::GroupedRr {
            plan: plan
                .cloned()
                .ok_or_else(|| config_err(format!("grouped_rr has no resampling plan for {id}")))?,
        },
    })
}

fn recorded_steps(len: usize, stride: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..len).step_by(stride).collect();
    if len > 0 && *ks.last().unwrap() != len - 1 {
        ks.push(len - 1);
    }
    ks
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?)))
}

fn eta_label(eta: f64) -> String {
    eta.to_string().replace('.', "p")
}

struct TrialRun {
    summary: TrialSummary,
    tail: Vec<f64>,
    path: Option<Trajectory>,
}

fn run_trajectories(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let problem = build_problem(cfg)?;
    let obj: &dyn Objective = problem.objective.as_ref();
    let d = obj.dim();
    if let Init::Fixed(t) = &problem.init {
        if t.len() != d {
            return Err(config_err(format!("`theta0` has dimension {}, expected {d}", t.len())));
        }
    }
    check_basins(&problem.basins, d)?;
    if cfg.histogram.coordinate >= d {
        return Err(config_err(format!(
            "`histogram.coordinate` {} out of range for dimension {d}",
            cfg.histogram.coordinate
        )));
    }
    let methods = cfg
        .methods
        .iter()
        .map(|m| Ok((*m, method_for(*m, problem.plan.as_ref(), cfg.experiment)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut runs: Vec<((MethodName, f64), Vec<TrialRun>)> = Vec::new();
    for (eta, schedule) in cfg.schedules() {
        for (name, method) in &methods {
            let trials = (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_one(cfg, &problem, obj, *name, method, eta, &schedule, t))
                .collect::<Result<Vec<_>>>()?;
            runs.push(((*name, eta), trials));
        }
    }

    let mut report = RunReport {
        experiment: cfg.experiment,
        dir: out.to_path_buf(),
        trials: Vec::new(),
        curves: Vec::new(),
        histograms: Vec::new(),
        basins: problem.basins.clone(),
        stability: None,
        sde: None,
    };
    let loss_steps = recorded_steps(cfg.steps + 1, cfg.loss_stride);
    for ((name, eta), trials) in &runs {
        let finite: Vec<Vec<f64>> = trials
            .iter()
            .filter(|r| r.summary.diverged_at.is_none())
            .map(|r| r.summary.loss_curve.clone())
            .collect();
        if !finite.is_empty() {
            let (mean, std) = aggregate_trials(&finite)?;
            report.curves.push(CurveStats {
                method: *name,
                eta: *eta,
                steps: loss_steps.clone(),
                mean,
                std,
                trials: finite.len(),
            });
        }
        let range = match cfg.histogram.range {
            Some([lo, hi]) => (lo, hi),
            None => pooled_range(trials.iter().flat_map(|r| r.tail.iter().copied())),
        };
        let mut h = empty_histogram(cfg.histogram.bins, range)?;
        for r in trials {
            accumulate(&mut h, r.tail.iter().copied());
        }
        normalize(&mut h);
        report.histograms.push((*name, *eta, h));
        report.trials.extend(trials.iter().map(|r| r.summary.clone()));
    }

    write_trials_csv(&out.join("trials.csv"), &report, d)?;
    write_aggregate_csv(&out.join("aggregate.csv"), &report.curves)?;
    write_histogram_csv(&out.join("histogram.csv"), &report.histograms)?;
    if !problem.reference.is_empty() {
        let mut w = csv_writer(&out.join("reference.csv"))?;
        w.write_record(["key", "value"])?;
        for (k, v) in &problem.reference {
            w.write_record([k, v])?;
        }
        w.flush()?;
    }
    if let Some(data) = &problem.data {
        data.write_csv(BufWriter::new(File::create(out.join("data.csv"))?))?;
    }
    if cfg.trajectory_export.trials > 0 {
        let dir = out.join("trajectories");
        fs::create_dir_all(&dir)?;
        for ((name, eta), trials) in &runs {
            for r in trials {
                if let Some(path) = &r.path {
                    let file = dir.join(format!(
                        "{}_eta{}_trial{}.csv",
                        name.name(),
                        eta_label(*eta),
                        r.summary.trial
                    ));
                    path.write_csv_strided(BufWriter::new(File::create(file)?), cfg.trajectory_export.stride)?;
                }
            }
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    cfg: &ExperimentConfig,
    problem: &Problem,
    obj: &dyn Objective,
    name: MethodName,
    method: &Method,
    eta: f64,
    schedule: &StepSchedule,
    trial: usize,
) -> Result<TrialRun> {
    let mut rng = trial_rng(cfg.seed, trial as u64);
    let theta0 = match &problem.init {
        Init::Fixed(t) => t.clone(),
        Init::Perturbed { center, offset, noise } => center
            .iter()
            .map(|c| {
                let z: f64 = rng.sample(StandardNormal);
                c + offset + noise * z
            })
            .collect(),
    };
    let traj = run_trajectory_with(obj, method, &theta0, schedule, cfg.steps, &mut rng)?;
    let loss_at = |k: usize| value(obj, traj.iterate(k)).expect("dimension checked");
    let loss_curve = if traj.diverged() {
        Vec::new()
    } else {
        recorded_steps(traj.len(), cfg.loss_stride)
            .into_iter()
            .map(loss_at)
            .collect()
    };
    let last = traj.last().to_vec();
    let basin_fractions = if problem.basins.is_empty() {
        Vec::new()
    } else {
        basin_occupancy(&traj, &problem.basins, cfg.burn_in)?
    };
    let start = tail_start(traj.len(), cfg.burn_in);
    let tail = traj
        .iterates()
        .skip(start)
        .map(|x| x[cfg.histogram.coordinate])
        .collect();
    let summary = TrialSummary {
        method: name,
        eta,
        trial,
        final_loss: loss_at(traj.len() - 1),
        final_basin: problem.basins.iter().position(|b| b.contains(&last)),
        final_theta: last,
        basin_fractions,
        diverged_at: traj.diverged_at,
        loss_curve,
    };
    let path = (trial < cfg.trajectory_export.trials).then_some(traj);
    Ok(TrialRun { summary, tail, path })
}

fn pooled_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn write_trials_csv(path: &Path, report: &RunReport, d: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["method", "eta", "trial", "final_loss"].map(String::from).to_vec();
    header.extend((1..=report.basins.len()).map(|i| format!("basin_{i}")));
    let basins = !report.basins.is_empty();
    if basins {
        header.push("final_basin".into());
    }
    header.extend((1..=d).map(|i| format!("theta_{i}")));
    header.extend(["diverged", "diverged_at"].map(String::from));
    w.write_record(&header)?;
    for t in &report.trials {
        let mut row = vec![
            t.method.name().to_string(),
            t.eta.to_string(),
            t.trial.to_string(),
            t.final_loss.to_string(),
        ];
        row.extend(t.basin_fractions.iter().map(f64::to_string));
        if basins {
            row.push(t.final_basin.map(|b| (b + 1).to_string()).unwrap_or_default());
        }
        row.extend(t.final_theta.iter().map(f64::to_string));
        row.push(u8::from(t.diverged_at.is_some()).to_string());
        row.push(t.diverged_at.map(|k| k.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_aggregate_csv(path: &Path, curves: &[CurveStats]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "eta", "k", "mean_loss", "std_loss", "trials"])?;
    for c in curves {
        for ((k, m), s) in c.steps.iter().zip(&c.mean).zip(&c.std) {
            w.write_record([
                c.method.name().to_string(),
                c.eta.to_string(),
                k.to_string(),
                m.to_string(),
                s.to_string(),
                c.trials.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_histogram_csv(path: &Path, hists: &[(MethodName, f64, Histogram)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "eta", "bin_lo", "bin_hi", "count", "density"])?;
    for (name, eta, h) in hists {
        for (i, (c, p)) in h.counts.iter().zip(&h.density).enumerate() {
            let (lo, hi) = h.edges(i);
            w.write_record([
                name.name().to_string(),
                eta.to_string(),
                lo.to_string(),
                hi.to_string(),
                c.to_string(),
                p.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_stability(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let s = cfg.stability.as_ref().expect("validated");
    let model = InterpolationModel::new(s.features.clone(), s.theta_star.clone())?;
    let d = model.dim();
    if s.grid_points < 2 || !(s.eta_min > 0.0 && s.eta_max > s.eta_min) {
        return Err(config_err(
            "`stability` grid needs 0 < eta_min < eta_max and at least 2 points",
        ));
    }
    if s.directions == 0 {
        return Err(config_err("`stability.directions` must be at least 1"));
    }
    let theta0 = if cfg.theta0.is_empty() {
        let mut t = s.theta_star.clone();
        t[0] += 1.0;
        t
    } else {
        cfg.theta0.clone()
    };
    if theta0.len() != d {
        return Err(config_err(format!(
            "`theta0` has dimension {}, expected {d}",
            theta0.len()
        )));
    }
    let grid = linear_grid(s.eta_min, s.eta_max, s.grid_points);
    let directions = random_directions(d, s.directions, s.direction_seed);
    let report = stability_scan(&model, &grid, &directions)?;
    report.write_csv(BufWriter::new(File::create(out.join("stability.csv"))?))?;
    {
        let mut w = csv_writer(&out.join("thresholds.csv"))?;
        w.write_record(["scheme", "threshold", "found"])?;
        for (name, t) in [("sgd", report.sgd_threshold), ("rr", report.rr_threshold)] {
            w.write_record([name.to_string(), t.threshold.to_string(), t.found.to_string()])?;
        }
        w.flush()?;
    }

    let obj = LinearLeastSquares::interpolating(s.features.clone(), &s.theta_star)?;
    let dist2 = |x: &[f64]| -> f64 { x.iter().zip(&s.theta_star).map(|(a, b)| (a - b) * (a - b)).sum() };
    let d0 = dist2(&theta0);
    if d0 == 0.0 {
        return Err(config_err("`theta0` must differ from `theta_star`"));
    }
    let mut trials = Vec::new();
    let mut curves = Vec::new();
    let mut moments = Vec::new();
    for &name in &cfg.methods {
        let method = method_for(name, None, cfg.experiment)?;
        let threshold = match name {
            MethodName::Rr => report.rr_threshold,
            _ => report.sgd_threshold,
        };
        if !threshold.found {
            continue;
        }
        for &factor in &s.mc_factors {
            let eta = factor * threshold.threshold;
            let schedule = StepSchedule::Constant { eta };
            let runs = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(cfg.seed, t as u64);
                    run_trajectory_with(&obj, &method, &theta0, &schedule, cfg.steps, &mut rng)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let diverged = runs.iter().filter(|r| r.diverged()).count();
            let finals: Vec<f64> = runs
                .iter()
                .map(|r| {
                    if r.diverged() {
                        f64::INFINITY
                    } else {
                        dist2(r.last()) / d0
                    }
                })
                .collect();
            let ratio = finals.iter().sum::<f64>() / finals.len() as f64;
            moments.push(SecondMoment {
                scheme: name,
                factor,
                eta,
                ratio,
                diverged,
            });
            let finite: Vec<Vec<f64>> = runs
                .iter()
                .filter(|r| !r.diverged())
                .map(|r| {
                    recorded_steps(r.len(), cfg.loss_stride)
                        .into_iter()
                        .map(|k| dist2(r.iterate(k)) / d0)
                        .collect()
                })
                .collect();
            if !finite.is_empty() {
                let (mean, std) = aggregate_trials(&finite)?;
                curves.push(CurveStats {
                    method: name,
                    eta,
                    steps: recorded_steps(cfg.steps + 1, cfg.loss_stride),
                    mean,
                    std,
                    trials: finite.len(),
                });
            }
            for (t, (r, f)) in runs.iter().zip(&finals).enumerate() {
                trials.push(TrialSummary {
                    method: name,
                    eta,
                    trial: t,
                    final_loss: *f,
                    final_theta: r.last().to_vec(),
                    basin_fractions: Vec::new(),
                    final_basin: None,
                    diverged_at: r.diverged_at,
                    loss_curve: Vec::new(),
                });
            }
        }
    }
    {
        let mut w = csv_writer(&out.join("second_moments.csv"))?;
        w.write_record(["scheme", "factor", "eta", "steps", "trials", "ratio", "diverged"])?;
        for m in &moments {
            w.write_record([
                m.scheme.name().to_string(),
                m.factor.to_string(),
                m.eta.to_string(),
                cfg.steps.to_string(),
                cfg.trials.to_string(),
                m.ratio.to_string(),
                m.diverged.to_string(),
            ])?;
        }
        w.flush()?;
    }
    let out_report = RunReport {
        experiment: cfg.experiment,
        dir: out.to_path_buf(),
        trials,
        curves,
        histograms: Vec::new(),
        basins: Vec::new(),
        stability: Some(StabilityOutcome { report, moments }),
        sde: None,
    };
    write_trials_csv(&out.join("trials.csv"), &out_report, d)?;
    write_aggregate_csv(&out.join("aggregate.csv"), &out_report.curves)?;
    Ok(out_report)
}

fn run_sde(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let s = cfg.sde.as_ref().expect("validated");
    let params = cfg.piecewise.expect("validated");
    let density = equilibrium_density(&params, s.eta, s.density_grid)?;
    density.write_csv(BufWriter::new(File::create(out.join("density.csv"))?), s.density_stride)?;
    {
        let mut w = csv_writer(&out.join("equilibrium.csv"))?;
        w.write_record([
            "eta",
            "mass_left",
            "mass_right",
            "basin_mass_ratio",
            "side_ratio",
            "flux_mismatch",
        ])?;
        w.write_record([
            s.eta.to_string(),
            density.mass_left().to_string(),
            density.mass_right().to_string(),
            density.basin_mass_ratio().to_string(),
            density.side_ratio().to_string(),
            density.flux_mismatch().to_string(),
        ])?;
        w.flush()?;
    }
    if s.deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(config_err("`sde.deltas` must be positive"));
    }
    let obj = PiecewiseExample::new(params)?;
    let theta0 = if cfg.theta0.is_empty() {
        vec![0.25]
    } else {
        cfg.theta0.clone()
    };
    if theta0.len() != 1 {
        return Err(config_err("`theta0` must be one-dimensional for sde-study"));
    }
    let mut ensembles = Vec::new();
    let mut trials = Vec::new();
    for &name in &cfg.methods {
        let scheme = match name {
            MethodName::Sgd => NoiseScheme::Sgd,
            MethodName::Rr => NoiseScheme::Rr,
            MethodName::GroupedRr => return Err(config_err("sde-study supports methods sgd and rr")),
        };
        let spec = EnsembleSpec {
            eta: s.eta,
            horizon: s.horizon,
            dt: s.dt,
            trials: cfg.trials,
            seed: cfg.seed,
            keep_paths: s.export_paths > 0,
        };
        let mut ens = deviation_ensemble(&obj, scheme, &theta0, spec)?;
        ens.paths.truncate(s.export_paths);
        if s.export_paths > 0 {
            ens.write_csv(
                BufWriter::new(File::create(out.join(format!("ensemble_{}.csv", scheme.name())))?),
                s.path_stride,
            )?;
        }
        for (t, sup) in ens.sup_deviation.iter().enumerate() {
            trials.push(TrialSummary {
                method: name,
                eta: s.eta,
                trial: t,
                final_loss: *sup,
                final_theta: Vec::new(),
                basin_fractions: Vec::new(),
                final_basin: None,
                diverged_at: (!sup.is_finite()).then_some(0),
                loss_curve: Vec::new(),
            });
        }
        ensembles.push(ens);
    }
    {
        let mut w = csv_writer(&out.join("deviation.csv"))?;
        w.write_record([
            "scheme",
            "delta",
            "horizon",
            "trials",
            "empirical_prob",
            "trace_integral",
            "trace_integral_se",
            "diverged",
        ])?;
        for ens in &ensembles {
            for &delta in &s.deltas {
                let e = ens.estimate(delta);
                w.write_record([
                    ens.scheme.name().to_string(),
                    delta.to_string(),
                    e.horizon.to_string(),
                    e.trials.to_string(),
                    e.empirical_prob.to_string(),
                    e.trace_integral.to_string(),
                    e.trace_integral_se.to_string(),
                    ens.diverged.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    {
        let mut w = csv_writer(&out.join("trials.csv"))?;
        w.write_record(["method", "trial", "sup_deviation", "trace_integral"])?;
        for ens in &ensembles {
            let mut integrals = ens.trace_integrals.iter();
            for (t, sup) in ens.sup_deviation.iter().enumerate() {
                let integral = if sup.is_finite() {
                    integrals.next().map(f64::to_string).unwrap_or_default()
                } else {
                    String::new()
                };
                w.write_record([ens.scheme.name().to_string(), t.to_string(), sup.to_string(), integral])?;
            }
        }
        w.flush()?;
    }
    Ok(RunReport {
        experiment: cfg.experiment,
        dir: out.to_path_buf(),
        trials,
        curves: Vec::new(),
        histograms: Vec::new(),
        basins: Vec::new(),
        stability: None,
        sde: Some(SdeOutcome { density, ensembles }),
    })
}

/// Default output directory for a config: its `out` field or `runs/<id>`.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()))
}
