//! Single free atom in a field of fixed Gaussian wells.
//!
//! Each fixed atom `k` contributes `V_k(z) = A_k exp(dᵀ M_k d)` with
//! `d = z − z_k` and `M_k = [[a_k, b_k/2], [b_k/2, c_k]]`. The objective is
//! the average over the fixed atoms.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objective::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: [f64; 2],
    pub amplitude: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Atom {
    /// Atom `k` (1-based) of the linear parameter schedule. Index 500 belongs
    /// to the first branch of the position schedule.
    pub fn scheduled(k: usize) -> Self {
        let kf = k as f64;
        let (x, y) = if k <= 500 {
            (2.0 - 0.006 * kf, 2.0 - 0.006 * kf)
        } else {
            (1.8 + 0.0024 * kf, -1.0 + 0.006 * kf)
        };
        Self {
            position: [x, y],
            amplitude: -50.0 - 0.15 * kf,
            a: -2.0 - 0.018 * kf,
            b: -0.1 + 0.0002 * kf,
            c: -10.0 + 0.009 * kf,
        }
    }

    fn exponent(&self, z: &[f64]) -> (f64, f64, f64) {
        let dx = z[0] - self.position[0];
        let dy = z[1] - self.position[1];
        (self.a * dx * dx + self.b * dx * dy + self.c * dy * dy, dx, dy)
    }

    pub fn potential(&self, z: &[f64]) -> f64 {
        self.amplitude * self.exponent(z).0.exp()
    }

    pub fn is_negative_definite(&self) -> bool {
        self.a < 0.0 && self.a * self.c - 0.25 * self.b * self.b > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSystemParams {
    /// All `m` atoms, including the free one.
    pub atoms: Vec<Atom>,
    /// 0-based index of the free atom in `atoms`.
    pub free_index: usize,
}

impl GaussianSystemParams {
    /// `m` atoms following the linear schedule `k = 1..=m`, with atom
    /// `free_atom` (1-based) left free.
    pub fn scheduled(m: usize, free_atom: usize) -> Result<Self> {
        if m < 2 || free_atom == 0 || free_atom > m {
            return Err(invalid(format!(
                "need m >= 2 and 1 <= free atom <= m (m={m}, free={free_atom})"
            )));
        }
        Ok(Self {
            atoms: (1..=m).map(Atom::scheduled).collect(),
            free_index: free_atom - 1,
        })
    }

    /// The thousand-atom system with atom 1 free.
    pub fn standard() -> Self {
        Self::scheduled(1000, 1).expect("valid defaults")
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSystem {
    fixed: Vec<Atom>,
}

impl GaussianSystem {
    pub fn new(params: &GaussianSystemParams) -> Result<Self> {
        if params.free_index >= params.atoms.len() || params.atoms.len() < 2 {
            return Err(invalid("free atom index out of range"));
        }
        let fixed = params
            .atoms
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != params.free_index)
            .map(|(_, a)| *a)
            .collect();
        Ok(Self { fixed })
    }

    pub fn fixed_atoms(&self) -> &[Atom] {
        &self.fixed
    }
}

impl Objective for GaussianSystem {
    fn dim(&self) -> usize {
        2
    }

    fn n_terms(&self) -> usize {
        self.fixed.len()
    }

    fn term_value(&self, i: usize, theta: &[f64]) -> f64 {
        self.fixed[i].potential(theta)
    }

    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]) {
        let atom = &self.fixed[i];
        let (q, dx, dy) = atom.exponent(theta);
        let s = atom.amplitude * q.exp();
        grad[0] = s * (2.0 * atom.a * dx + atom.b * dy);
        grad[1] = s * (atom.b * dx + 2.0 * atom.c * dy);
    }
}
