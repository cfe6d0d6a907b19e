//! Welsch loss `l_i(θ) = 1 − exp(−(y_i − θᵀx_i)²/2)` and the two synthetic
//! subgroup datasets it is exercised on.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, Uniform};

use crate::error::{invalid, Result};
use crate::objective::Objective;
use crate::rng::{seeded, StreamRng};

/// Samples `(x_i, y_i)` with a subgroup label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WelschDataset {
    dim: usize,
    features: Vec<f64>,
    responses: Vec<f64>,
    groups: Vec<usize>,
}

impl WelschDataset {
    pub fn new(features: Vec<Vec<f64>>, responses: Vec<f64>, groups: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        if features.len() != responses.len() || features.len() != groups.len() {
            return Err(invalid("features, responses and groups must have equal length"));
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|x| x.len() != dim) {
            return Err(invalid("feature vectors must share a positive dimension"));
        }
        let n_groups = groups.iter().max().unwrap() + 1;
        if (0..n_groups).any(|g| !groups.contains(&g)) {
            return Err(invalid("group labels must cover 0..m without gaps"));
        }
        Ok(Self {
            dim,
            features: features.concat(),
            responses,
            groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.iter().max().map_or(0, |m| m + 1)
    }

    /// Subgroup proportions `a_j = N_j / N`.
    pub fn proportions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.group_count()];
        for &g in &self.groups {
            counts[g] += 1;
        }
        counts.into_iter().map(|c| c as f64 / self.len() as f64).collect()
    }

    /// Writes `group,y,x_1..x_d` with a header row; groups are 1-based in the file.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["group".to_string(), "y".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x_{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![(self.groups[i] + 1).to_string(), self.responses[i].to_string()];
            row.extend(self.x(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "group" || &header[1] != "y" {
            return Err(invalid("dataset header must be group,y,x_1..x_d"));
        }
        let (mut xs, mut ys, mut gs) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad number {s:?}: {e}")))
            };
            let g: usize = rec[0]
                .trim()
                .parse()
                .map_err(|e| invalid(format!("bad group {:?}: {e}", &rec[0])))?;
            if g == 0 {
                return Err(invalid("group labels in files are 1-based"));
            }
            gs.push(g - 1);
            ys.push(parse(&rec[1])?);
            xs.push(rec.iter().skip(2).map(parse).collect::<Result<Vec<_>>>()?);
        }
        Self::new(xs, ys, gs)
    }
}

/// Per-sample Welsch objective over a dataset (uniform weights).
#[derive(Debug, Clone)]
pub struct WelschObjective {
    data: WelschDataset,
}

impl WelschObjective {
    pub fn new(data: WelschDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &WelschDataset {
        &self.data
    }

    fn residual(&self, i: usize, theta: &[f64]) -> f64 {
        let fit: f64 = self.data.x(i).iter().zip(theta).map(|(a, b)| a * b).sum();
        self.data.y(i) - fit
    }
}

impl Objective for WelschObjective {
    fn dim(&self) -> usize {
        self.data.dim
    }

    fn n_terms(&self) -> usize {
        self.data.len()
    }

    fn group_labels(&self) -> Option<&[usize]> {
        Some(&self.data.groups)
    }

    fn term_value(&self, i: usize, theta: &[f64]) -> f64 {
        let r = self.residual(i, theta);
        -(-0.5 * r * r).exp_m1()
    }

    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]) {
        let r = self.residual(i, theta);
        let s = -r * (-0.5 * r * r).exp();
        for (g, x) in grad.iter_mut().zip(self.data.x(i)) {
            *g = s * x;
        }
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// One-dimensional two-subgroup classification data: 800 samples with
/// `x = 20 + N(0,1)` and 4000 with `x = 0.5 + N(0,1/4)`, labels `Bernoulli(1/2)`.
///
/// Draw order: subgroup-1 features, subgroup-2 features, then all labels.
pub fn synthesize_classification_data(seed: u64) -> WelschDataset {
    const N1: usize = 800;
    const N2: usize = 4000;
    let mut rng = seeded(seed);
    let mut xs = Vec::with_capacity(N1 + N2);
    xs.extend((0..N1).map(|_| vec![20.0 + normal(&mut rng)]));
    xs.extend((0..N2).map(|_| vec![0.5 + 0.5 * normal(&mut rng)]));
    let coin = Bernoulli::new(0.5).unwrap();
    let ys = (0..N1 + N2)
        .map(|_| if coin.sample(&mut rng) { 1.0 } else { 0.0 })
        .collect();
    let groups = (0..N1 + N2).map(|i| usize::from(i >= N1)).collect();
    WelschDataset::new(xs, ys, groups).expect("synthetic dataset is well formed")
}

/// Knobs for [`synthesize_regression_data_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    pub dim: usize,
    pub n1: usize,
    pub n2: usize,
    pub corrupt: bool,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            dim: 10,
            n1: 2000,
            n2: 800,
            corrupt: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionData {
    pub dataset: WelschDataset,
    pub beta_star: Vec<f64>,
}

/// Ten-dimensional regression data with the default [`RegressionSpec`].
pub fn synthesize_regression_data(seed: u64) -> RegressionData {
    synthesize_regression_data_with(seed, RegressionSpec::default())
}

/// Subgroup 1: `x = 20e + N(0,I)`; subgroup 2: `x = e/4 + N(0,I)/2`;
/// `β* ~ N(0,I)`, `y = xᵀβ* + u + ε` with `u ~ Unif(±3‖y*‖∞)` and `ε ~ N(0,1)/10`.
///
/// Draw order: `β*`, subgroup-1 features, subgroup-2 features, then `(u_i, ε_i)`
/// per sample. With `corrupt = false` the noise draws are skipped and `y = y*`.
pub fn synthesize_regression_data_with(seed: u64, spec: RegressionSpec) -> RegressionData {
    let RegressionSpec { dim, n1, n2, corrupt } = spec;
    let mut rng = seeded(seed);
    let beta_star: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(n1 + n2);
    for _ in 0..n1 {
        xs.push((0..dim).map(|_| 20.0 + normal(&mut rng)).collect());
    }
    for _ in 0..n2 {
        xs.push((0..dim).map(|_| 0.25 + 0.5 * normal(&mut rng)).collect());
    }
    let clean: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().zip(&beta_star).map(|(a, b)| a * b).sum())
        .collect();
    let ys = if corrupt {
        let bound = 3.0 * clean.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let spread = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        clean
            .iter()
            .map(|y| {
                let u: f64 = rng.sample(spread);
                y + u + 0.1 * normal(&mut rng)
            })
            .collect()
    } else {
        clean
    };
    let groups = (0..n1 + n2).map(|i| usize::from(i >= n1)).collect();
    RegressionData {
        dataset: WelschDataset::new(xs, ys, groups).expect("synthetic dataset is well formed"),
        beta_star,
    }
}
