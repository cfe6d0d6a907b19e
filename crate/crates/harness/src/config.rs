//! Experiment configuration.
//!
//! A config file is a JSON object that names an `experiment` and overrides any
//! subset of that experiment's defaults. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rrsgd::losses::PiecewiseParams;
use rrsgd::sde::DensityGrid;
use rrsgd::StepSchedule;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Piecewise,
    WelschClassify,
    WelschRegress,
    MullerBrown,
    GaussianSystem,
    StabilityScan,
    SdeStudy,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Piecewise,
        ExperimentId::WelschClassify,
        ExperimentId::WelschRegress,
        ExperimentId::MullerBrown,
        ExperimentId::GaussianSystem,
        ExperimentId::StabilityScan,
        ExperimentId::SdeStudy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::Piecewise => "piecewise",
            ExperimentId::WelschClassify => "welsch-classify",
            ExperimentId::WelschRegress => "welsch-regress",
            ExperimentId::MullerBrown => "muller-brown",
            ExperimentId::GaussianSystem => "gaussian-system",
            ExperimentId::StabilityScan => "stability-scan",
            ExperimentId::SdeStudy => "sde-study",
        }
    }

    pub fn summary(&self) -> &'static str {
        match self {
            ExperimentId::Piecewise => "two-group piecewise loss: flat vs sharp minimum selection",
            ExperimentId::WelschClassify => "1-D Welsch classification with two subpopulations",
            ExperimentId::WelschRegress => "10-D robust regression, step-size sweep",
            ExperimentId::MullerBrown => "Muller-Brown surface from (-0.8, 1.0)",
            ExperimentId::GaussianSystem => "1000-atom Gaussian well system with decaying step",
            ExperimentId::StabilityScan => "linear stability thresholds and Monte-Carlo second moments",
            ExperimentId::SdeStudy => "equilibrium density and SDE deviation ensembles",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Sgd,
    Rr,
    GroupedRr,
}

impl MethodName {
    pub fn name(&self) -> &'static str {
        match self {
            MethodName::Sgd => "sgd",
            MethodName::Rr => "rr",
            MethodName::GroupedRr => "grouped_rr",
        }
    }
}

/// Region used for occupancy statistics. Intervals are open and apply to the
/// first coordinate; balls are closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Basin {
    Interval { lo: f64, hi: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Basin {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Basin::Interval { lo, hi } => x[0] > *lo && x[0] < *hi,
            Basin::Ball { center, radius } => {
                center.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum::<f64>() <= radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub bins: usize,
    /// `[lo, hi]`; pooled tail extremes when absent.
    pub range: Option<[f64; 2]>,
    /// 0-based coordinate that is binned.
    pub coordinate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryExport {
    /// Number of leading trials per (method, eta) written to `trajectories/`.
    pub trials: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelschSection {
    pub data_seed: u64,
    /// Regression start `β0 = β* + offset·e + noise·N(0, I)`, drawn per trial.
    pub init_offset: f64,
    pub init_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MullerBrownSection {
    pub scale: f64,
    /// Radius of the ball around the located global minimum counted as success.
    pub basin_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSection {
    pub atoms: usize,
    /// 1-based index of the atom left free.
    pub free_atom: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    /// Per-sample feature maps `∇_θ f(x_i, θ*)`.
    pub features: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    pub eta_min: f64,
    pub eta_max: f64,
    pub grid_points: usize,
    /// Random unit directions for the worst-case RR factor.
    pub directions: usize,
    pub direction_seed: u64,
    /// Multiples of each scheme's threshold checked by simulation.
    pub mc_factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    pub eta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub deltas: Vec<f64>,
    pub density_grid: DensityGrid,
    pub density_stride: usize,
    /// Number of ensemble paths written to `ensemble.csv`.
    pub export_paths: usize,
    pub path_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub trials: usize,
    pub steps: usize,
    pub methods: Vec<MethodName>,
    pub schedule: StepSchedule,
    /// Constant step sizes swept in turn; overrides `schedule` when non-empty.
    pub eta_sweep: Vec<f64>,
    /// Start point; empty means the experiment's own rule.
    pub theta0: Vec<f64>,
    pub out: Option<PathBuf>,
    pub burn_in: f64,
    pub basins: Vec<Basin>,
    pub histogram: HistogramSpec,
    /// Loss curves record every `loss_stride`-th iterate and the last one.
    pub loss_stride: usize,
    pub trajectory_export: TrajectoryExport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub piecewise: Option<PiecewiseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub welsch: Option<WelschSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub muller_brown: Option<MullerBrownSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeSection>,
}

fn piecewise_basins() -> Vec<Basin> {
    vec![
        Basin::Interval { lo: -1.4, hi: -0.6 },
        Basin::Interval { lo: 0.0, hi: 0.4 },
    ]
}

impl ExperimentConfig {
    /// Built-in defaults for `id`.
    pub fn default_for(id: ExperimentId) -> Self {
        let base = Self {
            experiment: id,
            seed: 0,
            trials: 10,
            steps: 2000,
            methods: vec![MethodName::Sgd, MethodName::Rr],
            schedule: StepSchedule::Constant { eta: 0.01 },
            eta_sweep: Vec::new(),
            theta0: Vec::new(),
            out: None,
            burn_in: 0.5,
            basins: Vec::new(),
            histogram: HistogramSpec {
                bins: 100,
                range: None,
                coordinate: 0,
            },
            loss_stride: 10,
            trajectory_export: TrajectoryExport { trials: 3, stride: 10 },
            piecewise: None,
            welsch: None,
            muller_brown: None,
            gaussian: None,
            stability: None,
            sde: None,
        };
        match id {
            ExperimentId::Piecewise => Self {
                trials: 100,
                steps: 10_000,
                methods: vec![MethodName::Sgd, MethodName::GroupedRr],
                schedule: StepSchedule::Constant { eta: 0.04 },
                theta0: vec![0.25],
                basins: piecewise_basins(),
                histogram: HistogramSpec {
                    bins: 140,
                    range: Some([-2.0, 1.5]),
                    coordinate: 0,
                },
                piecewise: Some(PiecewiseParams::standard()),
                ..base
            },
            ExperimentId::WelschClassify => Self {
                schedule: StepSchedule::Constant { eta: 0.015 },
                theta0: vec![-0.5],
                welsch: Some(WelschSection {
                    data_seed: 7,
                    init_offset: 0.0,
                    init_noise: 0.0,
                }),
                ..base
            },
            ExperimentId::WelschRegress => Self {
                steps: 5000,
                eta_sweep: vec![0.5, 0.4, 0.3],
                loss_stride: 25,
                trajectory_export: TrajectoryExport { trials: 1, stride: 25 },
                welsch: Some(WelschSection {
                    data_seed: 11,
                    init_offset: 5.0,
                    init_noise: 1.0,
                }),
                ..base
            },
            ExperimentId::MullerBrown => Self {
                steps: 5000,
                schedule: StepSchedule::Constant { eta: 0.002 },
                theta0: vec![-0.8, 1.0],
                muller_brown: Some(MullerBrownSection {
                    scale: 0.25,
                    basin_radius: 0.3,
                }),
                ..base
            },
            ExperimentId::GaussianSystem => Self {
                steps: 5000,
                schedule: StepSchedule::GeometricDecay {
                    start: 2e-3,
                    end: 1e-5,
                    steps: 5000,
                },
                theta0: vec![3.0, 1.0],
                gaussian: Some(GaussianSection {
                    atoms: 1000,
                    free_atom: 1,
                }),
                ..base
            },
            ExperimentId::StabilityScan => Self {
                trials: 200,
                steps: 100,
                theta0: vec![1.0],
                loss_stride: 1,
                trajectory_export: TrajectoryExport { trials: 0, stride: 1 },
                stability: Some(StabilitySection {
                    features: vec![vec![1.0], vec![3.0]],
                    theta_star: vec![0.0],
                    eta_min: 1e-3,
                    eta_max: 1.0,
                    grid_points: 1000,
                    directions: 100,
                    direction_seed: 1,
                    mc_factors: vec![0.9, 1.1],
                }),
                ..base
            },
            ExperimentId::SdeStudy => Self {
                trials: 500,
                steps: 0,
                theta0: vec![0.25],
                basins: piecewise_basins(),
                trajectory_export: TrajectoryExport { trials: 0, stride: 1 },
                piecewise: Some(PiecewiseParams::standard()),
                sde: Some(SdeSection {
                    eta: 0.04,
                    horizon: 2.0,
                    dt: 0.005,
                    deltas: vec![0.05, 0.1, 0.2, 0.4, 0.8],
                    density_grid: DensityGrid::default(),
                    density_stride: 1000,
                    export_paths: 5,
                    path_stride: 10,
                }),
                ..base
            },
        }
    }

    /// Parses a config object on top of the named experiment's defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err(format!("malformed JSON: {e}")))?;
        Self::from_value(value, &[])
    }

    /// Reads a config file. A bare experiment name that is not an existing path
    /// selects that experiment's defaults.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let value = if path.exists() {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: malformed JSON: {e}", path.display())))?
        } else if let Ok(id) = path.to_string_lossy().parse::<ExperimentId>() {
            serde_json::json!({ "experiment": id })
        } else {
            return Err(config_err(format!(
                "no config file at {} and not an experiment name",
                path.display()
            )));
        };
        Self::from_value(value, overrides)
    }

    fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let id = value
            .get("experiment")
            .ok_or_else(|| config_err("missing field `experiment`"))?;
        let id: ExperimentId =
            serde_json::from_value(id.clone()).map_err(|e| config_err(format!("field `experiment`: {e}")))?;
        let mut merged = serde_json::to_value(Self::default_for(id))?;
        merge(&mut merged, value);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Named diagnostics for values that deserialize but make no sense.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(config_err("`trials` must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(config_err("`methods` must not be empty"));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(config_err(format!(
                "`burn_in` must lie in [0, 1), got {}",
                self.burn_in
            )));
        }
        if self.histogram.bins < 2 {
            return Err(config_err("`histogram.bins` must be at least 2"));
        }
        if let Some([lo, hi]) = self.histogram.range {
            if !(lo < hi) {
                return Err(config_err("`histogram.range` must be increasing"));
            }
        }
        if self.loss_stride == 0 {
            return Err(config_err("`loss_stride` must be at least 1"));
        }
        if self.eta_sweep.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(config_err("`eta_sweep` entries must be positive"));
        }
        self.schedule
            .validate()
            .map_err(|e| config_err(format!("`schedule`: {e}")))?;
        if let Some(p) = &self.piecewise {
            p.validate().map_err(|e| config_err(format!("`piecewise`: {e}")))?;
        }
        for b in &self.basins {
            match b {
                Basin::Interval { lo, hi } if !(lo < hi) => {
                    return Err(config_err(format!("basin ({lo}, {hi}) is empty")))
                }
                Basin::Ball { radius, .. } if !(*radius > 0.0) => {
                    return Err(config_err("basin radius must be positive"))
                }
                _ => {}
            }
        }
        let section = |present: bool, name: &str| {
            if present {
                Ok(())
            } else {
                Err(config_err(format!(
                    "experiment {} needs a `{name}` section",
                    self.experiment
                )))
            }
        };
        match self.experiment {
            ExperimentId::Piecewise => section(self.piecewise.is_some(), "piecewise"),
            ExperimentId::WelschClassify | ExperimentId::WelschRegress => section(self.welsch.is_some(), "welsch"),
            ExperimentId::MullerBrown => section(self.muller_brown.is_some(), "muller_brown"),
            ExperimentId::GaussianSystem => section(self.gaussian.is_some(), "gaussian"),
            ExperimentId::StabilityScan => section(self.stability.is_some(), "stability"),
            ExperimentId::SdeStudy => {
                section(self.piecewise.is_some(), "piecewise")?;
                section(self.sde.is_some(), "sde")
            }
        }
    }

    /// Step schedules to run, labelled by the step size reported in outputs.
    pub fn schedules(&self) -> Vec<(f64, StepSchedule)> {
        if self.eta_sweep.is_empty() {
            vec![(self.schedule.eta(1), self.schedule)]
        } else {
            self.eta_sweep
                .iter()
                .map(|&eta| (eta, StepSchedule::Constant { eta }))
                .collect()
        }
    }
}

/// Recursive object merge; non-object values and tagged objects replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                // tagged values (schedules, basins) are replaced whole
                let tagged = v.get("kind").is_some();
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && !tagged => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(value: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{spec}` is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(format!("override `{spec}` has an empty key")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = value;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !slot.is_object() {
            return Err(config_err(format!("override `{key}`: `{part}` is not an object")));
        }
        slot = slot
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if slot.is_null() {
            *slot = Value::Object(Default::default());
        }
    }
    match slot.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), parsed);
            Ok(())
        }
        None => Err(config_err(format!("override `{key}` targets a non-object"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for id in ExperimentId::ALL {
            let cfg = ExperimentConfig::default_for(id);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(id.name().parse::<ExperimentId>().unwrap(), id);
        }
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_json_str(r#"{"experiment": "piecewise", "trials": 3}"#).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.steps, 10_000);
        assert_eq!(cfg.piecewise.unwrap().k, 5.0);
    }

    #[test]
    fn standard_parameters() {
        let p = ExperimentConfig::default_for(ExperimentId::Piecewise);
        assert_eq!(p.schedule, StepSchedule::Constant { eta: 0.04 });
        assert_eq!(p.theta0, vec![0.25]);
        let w = ExperimentConfig::default_for(ExperimentId::WelschClassify);
        assert_eq!((w.schedule.eta(1), w.theta0[0], w.trials), (0.015, -0.5, 10));
        let m = ExperimentConfig::default_for(ExperimentId::MullerBrown);
        assert_eq!(
            (m.schedule.eta(1), m.theta0.clone(), m.trials),
            (0.002, vec![-0.8, 1.0], 10)
        );
        assert_eq!(m.muller_brown.unwrap().scale, 0.25);
        let r = ExperimentConfig::default_for(ExperimentId::WelschRegress);
        assert_eq!(r.eta_sweep, vec![0.5, 0.4, 0.3]);
    }

    #[test]
    fn overrides_apply_nested_keys() {
        let mut v = serde_json::json!({"experiment": "piecewise"});
        apply_override(&mut v, "piecewise.k=3").unwrap();
        apply_override(&mut v, "trials=4").unwrap();
        let cfg = ExperimentConfig::from_value(v, &[]).unwrap();
        assert_eq!(cfg.trials, 4);
        let p = cfg.piecewise.unwrap();
        assert_eq!((p.k, p.a1), (3.0, 0.4));
        assert!(apply_override(&mut serde_json::json!({}), "novalue").is_err());
    }

    #[test]
    fn bad_fields_are_named() {
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "piecewise", "trails": 3}"#).unwrap_err();
        assert!(err.to_string().contains("trails"), "{err}");
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "piecewise", "trials": 0}"#).unwrap_err();
        assert!(err.to_string().contains("trials"));
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "nope"}"#).unwrap_err();
        assert!(err.to_string().contains("experiment"));
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "piecewise", "burn_in": 1.0}"#).unwrap_err();
        assert!(err.to_string().contains("burn_in"));
    }
}
