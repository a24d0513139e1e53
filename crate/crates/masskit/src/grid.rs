//! Quadrature-equipped discretization of the sphere.
//!
//! Nodes are Gauss-Legendre in cos(theta) crossed with an equispaced,
//! periodic phi grid. No node sits on a pole. Derivatives in theta use
//! finite-difference stencils on the non-uniform nodes; stencils near the
//! poles reach across them with symmetry-lifted ghost values (the value at
//! (-theta, phi) is +/- the value at (theta, phi + pi), sign fixed by the
//! tensor parity of the component). Rotationally symmetric data take a
//! one-dimensional fast path differentiated in x = cos(theta).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{fd_weights, gauss_legendre};

/// Behaviour of a component under the pole reflection
/// (theta, phi) -> (-theta, phi + pi).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct GhostRef {
    /// Source theta ring.
    ring: usize,
    /// Whether the value is lifted across a pole (phi shift + parity sign).
    mirrored: bool,
}

#[derive(Debug, Clone)]
struct ThetaRow {
    refs: Vec<GhostRef>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

/// Gauss-Legendre (in cos theta) x uniform (in phi) sphere grid with
/// cached derivative stencils and quadrature weights.
#[derive(Debug)]
pub struct SphereGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub theta: Vec<f64>,
    pub cos_theta: Vec<f64>,
    pub sin_theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Per-node quadrature weight in steradians (same for every node on a ring).
    pub ring_weight: Vec<f64>,
    half_width: usize,
    theta_rows: Vec<ThetaRow>,
    x_rows: Vec<(usize, Vec<f64>, Vec<f64>)>, // (window start, d/dx, d2/dx2)
    phi_w1: Vec<f64>,
    phi_w2: Vec<f64>,
}

impl PartialEq for SphereGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n_theta == other.n_theta && self.n_phi == other.n_phi
    }
}

pub type GridRef = Arc<SphereGrid>;

impl SphereGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<GridRef> {
        if n_theta < 4 {
            return Err(Error::PreconditionViolated(format!(
                "n_theta must be >= 4, got {n_theta}"
            )));
        }
        if n_phi < 8 || n_phi % 2 != 0 {
            return Err(Error::PreconditionViolated(format!(
                "n_phi must be even and >= 8, got {n_phi}"
            )));
        }
        let (x, w) = gauss_legendre(n_theta);
        // Nodes ascend in x = cos theta, so theta descends; store rings by
        // ascending theta (north to south).
        let mut theta: Vec<f64> = x.iter().rev().map(|&xi| xi.acos()).collect();
        let glw: Vec<f64> = w.iter().rev().cloned().collect();
        // acos is monotone; enforce strict ordering for stencil construction.
        for i in 1..n_theta {
            assert!(theta[i] > theta[i - 1]);
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let phi: Vec<f64> = (0..n_phi).map(|j| two_pi * j as f64 / n_phi as f64).collect();
        let ring_weight: Vec<f64> = glw.iter().map(|&wi| wi * two_pi / n_phi as f64).collect();

        let half_width = 3usize.min(n_theta / 2 - 1).max(1);
        let hw = half_width;

        // Theta stencils over pole-extended node positions.
        let mut theta_rows = Vec::with_capacity(n_theta);
        for i in 0..n_theta {
            let lo = i as isize - hw as isize;
            let hi = i as isize + hw as isize;
            let mut pos = Vec::with_capacity(2 * hw + 1);
            let mut refs = Vec::with_capacity(2 * hw + 1);
            for e in lo..=hi {
                if e < 0 {
                    let src = (-1 - e) as usize;
                    pos.push(-theta[src]);
                    refs.push(GhostRef { ring: src, mirrored: true });
                } else if e as usize >= n_theta {
                    let src = 2 * n_theta - 1 - e as usize;
                    pos.push(2.0 * std::f64::consts::PI - theta[src]);
                    refs.push(GhostRef { ring: src, mirrored: true });
                } else {
                    pos.push(theta[e as usize]);
                    refs.push(GhostRef { ring: e as usize, mirrored: false });
                }
            }
            let wts = fd_weights(theta[i], &pos, 2);
            theta_rows.push(ThetaRow { refs, w1: wts[1].clone(), w2: wts[2].clone() });
        }

        // x = cos theta stencils for the symmetric path: one-sided windows,
        // no ghosts (symmetric smooth data are smooth in x on [-1, 1]).
        let xs: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let width = (2 * hw + 1).min(n_theta);
        let mut x_rows = Vec::with_capacity(n_theta);
        for i in 0..n_theta {
            let mut start = i.saturating_sub(hw);
            if start + width > n_theta {
                start = n_theta - width;
            }
            let window = &xs[start..start + width];
            let wts = fd_weights(xs[i], window, 2);
            x_rows.push((start, wts[1].clone(), wts[2].clone()));
        }

        // Uniform periodic phi stencils.
        let h_phi = two_pi / n_phi as f64;
        let offs: Vec<f64> = (-(hw as isize)..=hw as isize)
            .map(|k| k as f64 * h_phi)
            .collect();
        let wphi = fd_weights(0.0, &offs, 2);

        let sin_theta: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        Ok(Arc::new(SphereGrid {
            n_theta,
            n_phi,
            theta,
            cos_theta: xs,
            sin_theta,
            phi,
            ring_weight,
            half_width,
            theta_rows,
            x_rows,
            phi_w1: wphi[1].clone(),
            phi_w2: wphi[2].clone(),
        }))
    }

    pub fn node_count(&self) -> usize {
        self.n_theta * self.n_phi
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_phi + j
    }

    /// Quadrature of ring-resolved values against the round measure.
    pub fn integrate_sym(&self, v: &[f64]) -> f64 {
        let np = self.n_phi as f64;
        v.iter()
            .zip(&self.ring_weight)
            .map(|(f, w)| f * w * np)
            .sum()
    }

    /// Quadrature of full nodal values against the round measure.
    pub fn integrate_full(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n_theta {
            let w = self.ring_weight[i];
            let row = &v[i * self.n_phi..(i + 1) * self.n_phi];
            s += w * row.iter().sum::<f64>();
        }
        s
    }

    /// d/dtheta of full nodal data with the given pole parity.
    pub fn d_theta_full(&self, v: &[f64], parity: Parity) -> Vec<f64> {
        self.theta_apply(v, parity, false)
    }

    /// d2/dtheta2 of full nodal data.
    pub fn d2_theta_full(&self, v: &[f64], parity: Parity) -> Vec<f64> {
        self.theta_apply(v, parity, true)
    }

    fn theta_apply(&self, v: &[f64], parity: Parity, second: bool) -> Vec<f64> {
        let np = self.n_phi;
        let shift = np / 2;
        let sgn = parity.sign();
        let mut out = vec![0.0; v.len()];
        for i in 0..self.n_theta {
            let row = &self.theta_rows[i];
            let ws = if second { &row.w2 } else { &row.w1 };
            for (r, &w) in row.refs.iter().zip(ws) {
                let base = r.ring * np;
                if r.mirrored {
                    for j in 0..np {
                        let jj = (j + shift) % np;
                        out[i * np + j] += w * sgn * v[base + jj];
                    }
                } else {
                    for j in 0..np {
                        out[i * np + j] += w * v[base + j];
                    }
                }
            }
        }
        out
    }

    pub fn d_phi_full(&self, v: &[f64]) -> Vec<f64> {
        self.phi_apply(v, &self.phi_w1)
    }

    pub fn d2_phi_full(&self, v: &[f64]) -> Vec<f64> {
        self.phi_apply(v, &self.phi_w2)
    }

    fn phi_apply(&self, v: &[f64], ws: &[f64]) -> Vec<f64> {
        let np = self.n_phi;
        let hw = self.half_width as isize;
        let mut out = vec![0.0; v.len()];
        for i in 0..self.n_theta {
            let base = i * np;
            for j in 0..np {
                let mut s = 0.0;
                for (k, &w) in (-hw..=hw).zip(ws) {
                    let jj = (j as isize + k).rem_euclid(np as isize) as usize;
                    s += w * v[base + jj];
                }
                out[base + j] = s;
            }
        }
        out
    }

    /// d/dx (x = cos theta) of ring-resolved symmetric data.
    pub fn dx_sym(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_theta];
        for i in 0..self.n_theta {
            let (start, w1, _) = &self.x_rows[i];
            out[i] = w1.iter().enumerate().map(|(k, &w)| w * v[start + k]).sum();
        }
        out
    }

    /// d2/dx2 of ring-resolved symmetric data.
    pub fn d2x_sym(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_theta];
        for i in 0..self.n_theta {
            let (start, _, w2) = &self.x_rows[i];
            out[i] = w2.iter().enumerate().map(|(k, &w)| w * v[start + k]).sum();
        }
        out
    }

    /// d/dtheta of symmetric data via the x chain rule.
    pub fn d_theta_sym(&self, v: &[f64]) -> Vec<f64> {
        let dx = self.dx_sym(v);
        (0..self.n_theta).map(|i| -self.sin_theta[i] * dx[i]).collect()
    }

    /// d2/dtheta2 of symmetric data via the x chain rule.
    pub fn d2_theta_sym(&self, v: &[f64]) -> Vec<f64> {
        let dx = self.dx_sym(v);
        let dxx = self.d2x_sym(v);
        (0..self.n_theta)
            .map(|i| {
                let s = self.sin_theta[i];
                let c = self.cos_theta[i];
                s * s * dxx[i] - c * dx[i]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_full_solid_angle() {
        let g = SphereGrid::new(16, 32).unwrap();
        let total: f64 = g.ring_weight.iter().map(|w| w * g.n_phi as f64).sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() / (4.0 * std::f64::consts::PI) < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(SphereGrid::new(3, 32).is_err());
        assert!(SphereGrid::new(8, 9).is_err());
        assert!(SphereGrid::new(8, 6).is_err());
    }

    #[test]
    fn sym_derivatives_exact_on_polynomials_in_x() {
        let g = SphereGrid::new(12, 16).unwrap();
        let v: Vec<f64> = g.cos_theta.iter().map(|&x| 3.0 * x * x - x).collect();
        let dx = g.dx_sym(&v);
        let dxx = g.d2x_sym(&v);
        for i in 0..g.n_theta {
            let x = g.cos_theta[i];
            assert!((dx[i] - (6.0 * x - 1.0)).abs() < 1e-11);
            assert!((dxx[i] - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn full_theta_derivative_of_smooth_scalar() {
        // f = cos(theta) is a smooth scalar: even parity. Its derivative is
        // -sin(theta); the stencil should be accurate near the poles thanks
        // to the symmetry lift.
        let g = SphereGrid::new(32, 16).unwrap();
        let mut v = vec![0.0; g.node_count()];
        for i in 0..g.n_theta {
            for j in 0..g.n_phi {
                v[g.idx(i, j)] = g.cos_theta[i];
            }
        }
        let d = g.d_theta_full(&v, Parity::Even);
        for i in 0..g.n_theta {
            for j in 0..g.n_phi {
                assert!((d[g.idx(i, j)] + g.sin_theta[i]).abs() < 2e-7);
            }
        }
    }

    #[test]
    fn phi_derivative_of_harmonic() {
        let g = SphereGrid::new(8, 64).unwrap();
        let mut v = vec![0.0; g.node_count()];
        for i in 0..g.n_theta {
            for j in 0..g.n_phi {
                v[g.idx(i, j)] = (2.0 * g.phi[j]).sin();
            }
        }
        let d = g.d_phi_full(&v);
        let d2 = g.d2_phi_full(&v);
        for i in 0..g.n_theta {
            for j in 0..g.n_phi {
                assert!((d[g.idx(i, j)] - 2.0 * (2.0 * g.phi[j]).cos()).abs() < 1e-6);
                assert!((d2[g.idx(i, j)] + 4.0 * (2.0 * g.phi[j]).sin()).abs() < 1e-5);
            }
        }
    }
}
