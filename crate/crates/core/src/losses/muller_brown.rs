//! Müller-Brown potential
//! `V(x,y) = Σ_i A_i exp(a_i(x−x_i)² + b_i(x−x_i)(y−y_i) + c_i(y−y_i)²)`
//! as a four-term finite sum, one term per exponential.

use serde::{Deserialize, Serialize};

use crate::objective::Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MullerBrownParams {
    pub amplitude: [f64; 4],
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub c: [f64; 4],
    pub x: [f64; 4],
    pub y: [f64; 4],
    /// Multiplies the whole surface; the objective's average loss is `scale · V`.
    pub scale: f64,
}

impl MullerBrownParams {
    pub fn standard(scale: f64) -> Self {
        Self {
            amplitude: [-150.0, -100.0, -170.0, 15.0],
            a: [-1.0, -1.0, -6.5, 0.7],
            b: [0.0, 0.0, 11.0, 0.6],
            c: [-10.0, -10.0, -6.5, 0.7],
            x: [1.0, 0.0, -0.5, -1.0],
            y: [0.0, 0.5, 1.5, 1.0],
            scale,
        }
    }

    fn exponential(&self, i: usize, p: &[f64]) -> (f64, f64, f64) {
        let dx = p[0] - self.x[i];
        let dy = p[1] - self.y[i];
        let e = (self.a[i] * dx * dx + self.b[i] * dx * dy + self.c[i] * dy * dy).exp();
        (e, dx, dy)
    }

    /// Unscaled potential `V(x, y)`.
    pub fn potential(&self, p: &[f64]) -> f64 {
        (0..4).map(|i| self.amplitude[i] * self.exponential(i, p).0).sum()
    }

    /// Unscaled gradient of `V`.
    pub fn potential_grad(&self, p: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..4 {
            let (e, dx, dy) = self.exponential(i, p);
            let s = self.amplitude[i] * e;
            g[0] += s * (2.0 * self.a[i] * dx + self.b[i] * dy);
            g[1] += s * (self.b[i] * dx + 2.0 * self.c[i] * dy);
        }
        g
    }
}

/// Objective with terms `l_i = 4·scale·A_i exp(...)`, so the average is `scale·V`.
#[derive(Debug, Clone)]
pub struct MullerBrown {
    params: MullerBrownParams,
}

impl MullerBrown {
    pub fn new(params: MullerBrownParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &MullerBrownParams {
        &self.params
    }
}

impl Objective for MullerBrown {
    fn dim(&self) -> usize {
        2
    }

    fn n_terms(&self) -> usize {
        4
    }

    fn term_value(&self, i: usize, theta: &[f64]) -> f64 {
        4.0 * self.params.scale * self.params.amplitude[i] * self.params.exponential(i, theta).0
    }

    fn term_grad(&self, i: usize, theta: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let (e, dx, dy) = p.exponential(i, theta);
        let s = 4.0 * p.scale * p.amplitude[i] * e;
        grad[0] = s * (2.0 * p.a[i] * dx + p.b[i] * dy);
        grad[1] = s * (p.b[i] * dx + 2.0 * p.c[i] * dy);
    }
}

/// A located minimum of the unscaled surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceMinimum {
    pub point: [f64; 2],
    pub potential: f64,
}

/// Box and resolution for [`locate_global_minimum`].
#[derive(Debug, Clone, Copy)]
pub struct SearchBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub step: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            x: (-1.5, 1.2),
            y: (-0.2, 2.0),
            step: 1e-3,
        }
    }
}

/// Brute-force grid scan followed by damped Newton refinement of the best cell.
pub fn locate_global_minimum(params: &MullerBrownParams, search: SearchBox) -> SurfaceMinimum {
    let nx = ((search.x.1 - search.x.0) / search.step).round() as usize;
    let ny = ((search.y.1 - search.y.0) / search.step).round() as usize;
    let mut best = ([search.x.0, search.y.0], f64::INFINITY);
    for ix in 0..=nx {
        let x = search.x.0 + ix as f64 * search.step;
        for iy in 0..=ny {
            let p = [x, search.y.0 + iy as f64 * search.step];
            let v = params.potential(&p);
            if v < best.1 {
                best = (p, v);
            }
        }
    }
    let mut p = best.0;
    for _ in 0..100 {
        let g = params.potential_grad(&p);
        let h = 1e-6;
        let gx = params.potential_grad(&[p[0] + h, p[1]]);
        let gxm = params.potential_grad(&[p[0] - h, p[1]]);
        let gy = params.potential_grad(&[p[0], p[1] + h]);
        let gym = params.potential_grad(&[p[0], p[1] - h]);
        let hxx = (gx[0] - gxm[0]) / (2.0 * h);
        let hxy = 0.5 * ((gx[1] - gxm[1]) + (gy[0] - gym[0])) / (2.0 * h);
        let hyy = (gy[1] - gym[1]) / (2.0 * h);
        let det = hxx * hyy - hxy * hxy;
        if !(hxx > 0.0 && det > 0.0) {
            break;
        }
        let step = [(hyy * g[0] - hxy * g[1]) / det, (hxx * g[1] - hxy * g[0]) / det];
        let next = [p[0] - step[0], p[1] - step[1]];
        if params.potential(&next) > params.potential(&p) {
            break;
        }
        p = next;
        if step[0].abs() + step[1].abs() < 1e-14 {
            break;
        }
    }
    SurfaceMinimum {
        point: p,
        potential: params.potential(&p),
    }
}
