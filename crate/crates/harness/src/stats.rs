//! Trajectory statistics: tail histograms, basin occupancy, loss aggregation.

use rrsgd::Trajectory;
use serde::Serialize;

use crate::config::Basin;
use crate::error::{config_err, HarnessError, Result};

/// Index of the first post-burn-in iterate.
pub fn tail_start(len: usize, burn_in_fraction: f64) -> usize {
    ((len as f64) * burn_in_fraction).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Counts divided by `(in-range total) · bin width`.
    pub density: Vec<f64>,
    /// Tail samples falling outside `[lo, hi]`.
    pub outside: u64,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + bin as f64 * w, self.lo + (bin + 1) as f64 * w)
    }

    /// Fraction of in-range samples in bins wholly inside `(a, b)`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let w = self.bin_width();
        (0..self.counts.len())
            .filter(|&i| {
                let (l, h) = self.edges(i);
                l >= a && h <= b
            })
            .map(|i| self.density[i] * w)
            .sum()
    }
}

/// Builds an empty histogram over `range`, ready for [`accumulate`].
pub fn empty_histogram(bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if bins < 2 {
        return Err(config_err("histogram needs at least 2 bins"));
    }
    if !(range.0 < range.1 && range.0.is_finite() && range.1.is_finite()) {
        return Err(config_err(format!("histogram range {range:?} is not increasing")));
    }
    Ok(Histogram {
        lo: range.0,
        hi: range.1,
        counts: vec![0; bins],
        density: vec![0.0; bins],
        outside: 0,
    })
}

/// Adds samples; the right edge belongs to the last bin.
pub fn accumulate(h: &mut Histogram, values: impl Iterator<Item = f64>) {
    let bins = h.counts.len();
    let w = h.bin_width();
    for v in values {
        if !(v >= h.lo && v <= h.hi) {
            h.outside += 1;
            continue;
        }
        let b = (((v - h.lo) / w) as usize).min(bins - 1);
        h.counts[b] += 1;
    }
}

/// Recomputes `density` from `counts`. An all-outside histogram keeps zeros.
pub fn normalize(h: &mut Histogram) {
    let total: u64 = h.counts.iter().sum();
    let w = h.bin_width();
    h.density = h
        .counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * w) })
        .collect();
}

/// Density histogram of coordinate `coordinate` over the post-burn-in iterates.
pub fn tail_histogram_of(
    traj: &Trajectory,
    coordinate: usize,
    burn_in_fraction: f64,
    bins: usize,
    range: (f64, f64),
) -> Result<Histogram> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(config_err(format!(
            "burn-in fraction must lie in [0, 1), got {burn_in_fraction}"
        )));
    }
    if coordinate >= traj.dim() {
        return Err(config_err(format!(
            "coordinate {coordinate} out of range for dimension {}",
            traj.dim()
        )));
    }
    let start = tail_start(traj.len(), burn_in_fraction);
    if start >= traj.len() {
        return Err(config_err("trajectory tail is empty"));
    }
    let mut h = empty_histogram(bins, range)?;
    accumulate(&mut h, traj.iterates().skip(start).map(|x| x[coordinate]));
    normalize(&mut h);
    Ok(h)
}

/// [`tail_histogram_of`] on the first coordinate.
pub fn tail_histogram(traj: &Trajectory, burn_in_fraction: f64, bins: usize, range: (f64, f64)) -> Result<Histogram> {
    tail_histogram_of(traj, 0, burn_in_fraction, bins, range)
}

fn basins_overlap(a: &Basin, b: &Basin) -> Result<bool> {
    match (a, b) {
        (Basin::Interval { lo: l1, hi: h1 }, Basin::Interval { lo: l2, hi: h2 }) => Ok(l1.max(*l2) < h1.min(*h2)),
        (Basin::Ball { center: c1, radius: r1 }, Basin::Ball { center: c2, radius: r2 }) => {
            if c1.len() != c2.len() {
                return Err(config_err("balls of different dimension"));
            }
            let d = c1.iter().zip(c2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            Ok(d <= r1 + r2)
        }
        _ => Err(config_err("cannot mix interval and ball basins")),
    }
}

/// Rejects overlapping or malformed basin lists.
pub fn check_basins(basins: &[Basin], dim: usize) -> Result<()> {
    for b in basins {
        if let Basin::Ball { center, .. } = b {
            if center.len() != dim {
                return Err(config_err(format!(
                    "ball center has dimension {}, expected {dim}",
                    center.len()
                )));
            }
        }
    }
    for (i, a) in basins.iter().enumerate() {
        for b in &basins[i + 1..] {
            if basins_overlap(a, b)? {
                return Err(config_err(format!("basins {a:?} and {b:?} overlap")));
            }
        }
    }
    Ok(())
}

/// Fraction of post-burn-in iterates inside each basin.
pub fn basin_occupancy(traj: &Trajectory, basins: &[Basin], burn_in_fraction: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(config_err(format!(
            "burn-in fraction must lie in [0, 1), got {burn_in_fraction}"
        )));
    }
    check_basins(basins, traj.dim())?;
    let start = tail_start(traj.len(), burn_in_fraction);
    let tail = traj.len().saturating_sub(start);
    if tail == 0 {
        return Err(config_err("trajectory tail is empty"));
    }
    let mut hits = vec![0usize; basins.len()];
    for x in traj.iterates().skip(start) {
        if let Some(b) = basins.iter().position(|b| b.contains(x)) {
            hits[b] += 1;
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / tail as f64).collect())
}

/// Elementwise mean and sample standard deviation (0 for one trial).
pub fn aggregate_trials(curves: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = curves.first().ok_or_else(|| config_err("no trials to aggregate"))?;
    let len = first.len();
    if let Some(bad) = curves.iter().find(|c| c.len() != len) {
        return Err(HarnessError::Config(format!(
            "ragged trials: lengths {len} and {}",
            bad.len()
        )));
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    for c in curves {
        for (m, x) in mean.iter_mut().zip(c) {
            *m += x / n;
        }
    }
    let std = if curves.len() < 2 {
        vec![0.0; len]
    } else {
        (0..len)
            .map(|k| {
                let ss: f64 = curves.iter().map(|c| (c[k] - mean[k]).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            })
            .collect()
    };
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rrsgd::losses::QuadraticTerms;
    use rrsgd::samplers::run_trajectory;
    use rrsgd::{Method, StepSchedule};

    fn constant_path(x: f64, len: usize) -> Trajectory {
        let q = QuadraticTerms::new(vec![1.0], vec![vec![x]]).unwrap();
        run_trajectory(&q, &Method::Sgd, &[x], &StepSchedule::Constant { eta: 0.1 }, len - 1, 0).unwrap()
    }

    #[test]
    fn constant_path_fills_one_bin() {
        let h = tail_histogram(&constant_path(0.3, 50), 0.5, 10, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
        let integral: f64 = h.density.iter().sum::<f64>() * h.bin_width();
        assert!((integral - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_errors() {
        let p = constant_path(0.3, 10);
        assert!(tail_histogram(&p, 1.0, 10, (0.0, 1.0)).is_err());
        assert!(tail_histogram(&p, 0.5, 1, (0.0, 1.0)).is_err());
        assert!(tail_histogram(&p, 0.5, 4, (1.0, 0.0)).is_err());
    }

    #[test]
    fn occupancy_of_a_resting_path() {
        let basins = [
            Basin::Interval { lo: 0.0, hi: 0.5 },
            Basin::Interval { lo: 0.5, hi: 1.0 },
        ];
        let occ = basin_occupancy(&constant_path(0.3, 20), &basins, 0.5).unwrap();
        assert_eq!(occ, vec![1.0, 0.0]);
        let overlapping = [
            Basin::Interval { lo: 0.0, hi: 0.6 },
            Basin::Interval { lo: 0.5, hi: 1.0 },
        ];
        assert!(basin_occupancy(&constant_path(0.3, 20), &overlapping, 0.5).is_err());
        let balls = [
            Basin::Ball {
                center: vec![0.0],
                radius: 1.0,
            },
            Basin::Ball {
                center: vec![1.5],
                radius: 1.0,
            },
        ];
        assert!(check_basins(&balls, 1).is_err());
    }

    #[test]
    fn aggregation() {
        let (m, s) = aggregate_trials(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!((m, s), (vec![1.0, 2.0], vec![0.0, 0.0]));
        let (_, s) = aggregate_trials(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
        let (m, s) = aggregate_trials(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(m, vec![1.0]);
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(aggregate_trials(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(aggregate_trials(&[]).is_err());
    }
}
