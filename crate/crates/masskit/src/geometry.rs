//! Surface and foliated metrics with their curvature operators.
//!
//! Sign conventions: mean curvature of the unit round sphere in flat space
//! is n-1 (= 2 for n = 3), measured with respect to the normal pointing to
//! the unbounded region. Scalar curvature of a 2-metric is twice its Gauss
//! curvature.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Field, Unit, Values};
use crate::grid::{GridRef, Parity, SphereGrid};

fn rep_len(grid: &SphereGrid, sym: bool) -> usize {
    if sym {
        grid.n_theta
    } else {
        grid.node_count()
    }
}

/// Derivative dispatcher over the two storage layouts.
pub(crate) struct Diff<'a> {
    pub grid: &'a SphereGrid,
    pub sym: bool,
}

impl<'a> Diff<'a> {
    pub fn dt(&self, v: &[f64], p: Parity) -> Vec<f64> {
        if self.sym {
            self.grid.d_theta_sym(v)
        } else {
            self.grid.d_theta_full(v, p)
        }
    }

    pub fn dtt(&self, v: &[f64], p: Parity) -> Vec<f64> {
        if self.sym {
            self.grid.d2_theta_sym(v)
        } else {
            self.grid.d2_theta_full(v, p)
        }
    }

    pub fn dp(&self, v: &[f64]) -> Vec<f64> {
        if self.sym {
            vec![0.0; v.len()]
        } else {
            self.grid.d_phi_full(v)
        }
    }

    pub fn dpp(&self, v: &[f64]) -> Vec<f64> {
        if self.sym {
            vec![0.0; v.len()]
        } else {
            self.grid.d2_phi_full(v)
        }
    }

    pub fn dtp(&self, v: &[f64], p: Parity) -> Vec<f64> {
        if self.sym {
            vec![0.0; v.len()]
        } else {
            self.grid.d_phi_full(&self.grid.d_theta_full(v, p))
        }
    }

    #[inline]
    pub fn ring(&self, k: usize) -> usize {
        if self.sym {
            k
        } else {
            k / self.grid.n_phi
        }
    }
}

/// A Riemannian 2-metric on the sphere grid. Components are stored in the
/// (theta, phi) coordinate frame; lengths squared.
#[derive(Debug, Clone)]
pub struct SurfaceMetric {
    pub grid: GridRef,
    /// Rotationally symmetric fast path: components depend on theta only
    /// and g12 vanishes.
    pub symmetric: bool,
    pub g11: Vec<f64>,
    pub g12: Vec<f64>,
    pub g22: Vec<f64>,
}

impl SurfaceMetric {
    pub fn new_sym(grid: &GridRef, g11: Vec<f64>, g22: Vec<f64>) -> SurfaceMetric {
        assert_eq!(g11.len(), grid.n_theta);
        assert_eq!(g22.len(), grid.n_theta);
        let n = grid.n_theta;
        SurfaceMetric {
            grid: Arc::clone(grid),
            symmetric: true,
            g11,
            g12: vec![0.0; n],
            g22,
        }
    }

    pub fn new_full(grid: &GridRef, g11: Vec<f64>, g12: Vec<f64>, g22: Vec<f64>) -> SurfaceMetric {
        let n = grid.node_count();
        assert_eq!(g11.len(), n);
        assert_eq!(g12.len(), n);
        assert_eq!(g22.len(), n);
        SurfaceMetric { grid: Arc::clone(grid), symmetric: false, g11, g12, g22 }
    }

    /// Round metric of radius r: r^2 (dtheta^2 + sin^2 theta dphi^2).
    pub fn round(grid: &GridRef, r: f64) -> SurfaceMetric {
        let g11 = vec![r * r; grid.n_theta];
        let g22 = grid.sin_theta.iter().map(|s| r * r * s * s).collect();
        SurfaceMetric::new_sym(grid, g11, g22)
    }

    /// Sample components from functions of (theta, phi).
    pub fn sample(
        grid: &GridRef,
        f11: impl Fn(f64, f64) -> f64,
        f12: impl Fn(f64, f64) -> f64,
        f22: impl Fn(f64, f64) -> f64,
    ) -> SurfaceMetric {
        let n = grid.node_count();
        let mut g11 = vec![0.0; n];
        let mut g12 = vec![0.0; n];
        let mut g22 = vec![0.0; n];
        for i in 0..grid.n_theta {
            for j in 0..grid.n_phi {
                let k = grid.idx(i, j);
                g11[k] = f11(grid.theta[i], grid.phi[j]);
                g12[k] = f12(grid.theta[i], grid.phi[j]);
                g22[k] = f22(grid.theta[i], grid.phi[j]);
            }
        }
        SurfaceMetric::new_full(grid, g11, g12, g22)
    }

    /// Sample axisymmetric components from functions of theta.
    pub fn sample_sym(
        grid: &GridRef,
        f11: impl Fn(f64) -> f64,
        f22: impl Fn(f64) -> f64,
    ) -> SurfaceMetric {
        let g11 = grid.theta.iter().map(|&t| f11(t)).collect();
        let g22 = grid.theta.iter().map(|&t| f22(t)).collect();
        SurfaceMetric::new_sym(grid, g11, g22)
    }

    pub fn len(&self) -> usize {
        rep_len(&self.grid, self.symmetric)
    }

    pub fn to_full(&self) -> SurfaceMetric {
        if !self.symmetric {
            return self.clone();
        }
        let np = self.grid.n_phi;
        let expand = |v: &Vec<f64>| -> Vec<f64> {
            let mut out = vec![0.0; self.grid.node_count()];
            for i in 0..self.grid.n_theta {
                for j in 0..np {
                    out[i * np + j] = v[i];
                }
            }
            out
        };
        SurfaceMetric {
            grid: Arc::clone(&self.grid),
            symmetric: false,
            g11: expand(&self.g11),
            g12: expand(&self.g12),
            g22: expand(&self.g22),
        }
    }

    pub fn det(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.g11[k] * self.g22[k] - self.g12[k] * self.g12[k])
            .collect()
    }

    pub fn check_positive_definite(&self) -> Result<()> {
        let det = self.det();
        for k in 0..self.len() {
            if !(self.g11[k] > 0.0 && det[k] > 0.0) {
                return Err(Error::NonPositiveDefinite(format!(
                    "g11 = {:.3e}, det = {:.3e} at node {k}",
                    self.g11[k], det[k]
                )));
            }
        }
        Ok(())
    }

    /// Inverse components (g^11, g^12, g^22).
    pub fn inverse(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let det = self.det();
        let n = self.len();
        let mut i11 = vec![0.0; n];
        let mut i12 = vec![0.0; n];
        let mut i22 = vec![0.0; n];
        for k in 0..n {
            i11[k] = self.g22[k] / det[k];
            i12[k] = -self.g12[k] / det[k];
            i22[k] = self.g11[k] / det[k];
        }
        (i11, i12, i22)
    }

    /// sqrt(det g) / sin(theta): the density of the metric measure against
    /// the round solid-angle measure. Finite at every node.
    pub fn area_element_ratio(&self) -> Field {
        let det = self.det();
        match self.symmetric {
            true => {
                let v = (0..self.grid.n_theta)
                    .map(|i| det[i].sqrt() / self.grid.sin_theta[i])
                    .collect();
                Field::from_sym(&self.grid, v, Unit::AREA)
            }
            false => {
                let np = self.grid.n_phi;
                let v = (0..self.grid.node_count())
                    .map(|k| det[k].sqrt() / self.grid.sin_theta[k / np])
                    .collect();
                Field::from_full(&self.grid, v, Unit::AREA)
            }
        }
    }

    pub fn area(&self) -> f64 {
        self.area_element_ratio().integrate_round()
    }

    /// Integral of a field against this metric's surface measure.
    pub fn integrate(&self, f: &Field) -> f64 {
        self.area_element_ratio().mul(f).integrate_round()
    }

    /// Multiply all components by a pointwise factor (conformal scaling of
    /// the induced metric by that factor).
    pub fn scaled_by(&self, w: &Field) -> SurfaceMetric {
        match (&w.values, self.symmetric) {
            (Values::Sym(wv), true) => {
                let g11 = self.g11.iter().zip(wv).map(|(a, b)| a * b).collect();
                let g22 = self.g22.iter().zip(wv).map(|(a, b)| a * b).collect();
                SurfaceMetric::new_sym(&self.grid, g11, g22)
            }
            _ => {
                let full = self.to_full();
                let wf = w.to_full();
                let g11 = full.g11.iter().zip(&wf).map(|(a, b)| a * b).collect();
                let g12 = full.g12.iter().zip(&wf).map(|(a, b)| a * b).collect();
                let g22 = full.g22.iter().zip(&wf).map(|(a, b)| a * b).collect();
                SurfaceMetric::new_full(&self.grid, g11, g12, g22)
            }
        }
    }

    pub fn scale(&self, c: f64) -> SurfaceMetric {
        let mut m = self.clone();
        for v in m.g11.iter_mut().chain(m.g12.iter_mut()).chain(m.g22.iter_mut()) {
            *v *= c;
        }
        m
    }

    fn wrap(&self, v: Vec<f64>, unit: Unit) -> Field {
        if self.symmetric {
            Field::from_sym(&self.grid, v, unit)
        } else {
            Field::from_full(&self.grid, v, unit)
        }
    }

    /// Sup distance between component arrays of two metrics on the same grid.
    pub fn component_distance(&self, other: &SurfaceMetric) -> f64 {
        let a = self.to_full();
        let b = other.to_full();
        let mut d: f64 = 0.0;
        for k in 0..a.g11.len() {
            d = d.max((a.g11[k] - b.g11[k]).abs());
            d = d.max((a.g12[k] - b.g12[k]).abs());
            d = d.max((a.g22[k] - b.g22[k]).abs());
        }
        d
    }
}

/// Options for the curvature operators.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureOptions {
    /// Sup bound on any intermediate derivative estimate; exceeding it
    /// signals under-resolved input.
    pub derivative_bound: f64,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        CurvatureOptions { derivative_bound: 1e12 }
    }
}

struct MetricDerivs {
    e_t: Vec<f64>,
    e_p: Vec<f64>,
    f_t: Vec<f64>,
    f_p: Vec<f64>,
    g_t: Vec<f64>,
    g_p: Vec<f64>,
}

/// First derivatives of the components. The phi-phi and theta-phi components
/// degenerate like sin^2 and sin near the poles, so they are differenced as
/// the pole-regular quotients g22/sin^2 and g12/sin (both even under the
/// pole lift) and reassembled with analytic sine factors. This keeps the
/// absolute stencil error proportional to the component size.
fn metric_first_derivs(m: &SurfaceMetric) -> MetricDerivs {
    let d = Diff { grid: &m.grid, sym: m.symmetric };
    let n = m.len();
    let sin = |k: usize| m.grid.sin_theta[d.ring(k)];
    let cos = |k: usize| m.grid.cos_theta[d.ring(k)];
    let f_reg: Vec<f64> = (0..n).map(|k| m.g12[k] / sin(k)).collect();
    let g_reg: Vec<f64> = (0..n).map(|k| m.g22[k] / (sin(k) * sin(k))).collect();
    let f_reg_t = d.dt(&f_reg, Parity::Even);
    let f_reg_p = d.dp(&f_reg);
    let g_reg_t = d.dt(&g_reg, Parity::Even);
    let g_reg_p = d.dp(&g_reg);
    let mut f_t = vec![0.0; n];
    let mut f_p = vec![0.0; n];
    let mut g_t = vec![0.0; n];
    let mut g_p = vec![0.0; n];
    for k in 0..n {
        let (s, c) = (sin(k), cos(k));
        f_t[k] = c * f_reg[k] + s * f_reg_t[k];
        f_p[k] = s * f_reg_p[k];
        g_t[k] = 2.0 * s * c * g_reg[k] + s * s * g_reg_t[k];
        g_p[k] = s * s * g_reg_p[k];
    }
    MetricDerivs {
        e_t: d.dt(&m.g11, Parity::Even),
        e_p: d.dp(&m.g11),
        f_t,
        f_p,
        g_t,
        g_p,
    }
}

fn check_bound(name: &str, v: &[f64], bound: f64) -> Result<()> {
    for &x in v {
        if !x.is_finite() || x.abs() > bound {
            return Err(Error::DerivativeBlowup(format!("{name}: |{x:.3e}| > {bound:.1e}")));
        }
    }
    Ok(())
}

/// Scalar curvature R = 2K of a 2-metric via the Brioschi formula.
pub fn gauss_scalar_curvature(m: &SurfaceMetric) -> Result<Field> {
    gauss_scalar_curvature_with(m, &CurvatureOptions::default())
}

pub fn gauss_scalar_curvature_with(m: &SurfaceMetric, opt: &CurvatureOptions) -> Result<Field> {
    m.check_positive_definite()?;
    let d = Diff { grid: &m.grid, sym: m.symmetric };
    let md = metric_first_derivs(m);
    let e_pp = d.dpp(&m.g11);
    let n = m.len();
    let sin = |k: usize| m.grid.sin_theta[d.ring(k)];
    let cos = |k: usize| m.grid.cos_theta[d.ring(k)];
    // Second derivatives of the degenerate components, via the regular
    // quotients (see metric_first_derivs).
    let f_reg: Vec<f64> = (0..n).map(|k| m.g12[k] / sin(k)).collect();
    let g_reg: Vec<f64> = (0..n).map(|k| m.g22[k] / (sin(k) * sin(k))).collect();
    let f_reg_tp = d.dtp(&f_reg, Parity::Even);
    let f_reg_p = d.dp(&f_reg);
    let g_reg_t = d.dt(&g_reg, Parity::Even);
    let g_reg_tt = d.dtt(&g_reg, Parity::Even);
    let mut f_tp = vec![0.0; n];
    let mut g_tt = vec![0.0; n];
    for k in 0..n {
        let (s, c) = (sin(k), cos(k));
        f_tp[k] = c * f_reg_p[k] + s * f_reg_tp[k];
        let cos2 = c * c - s * s;
        g_tt[k] = 2.0 * cos2 * g_reg[k] + 4.0 * s * c * g_reg_t[k] + s * s * g_reg_tt[k];
    }
    for (name, v) in [
        ("dE/dtheta", &md.e_t),
        ("d2E/dphi2", &e_pp),
        ("d2F/dthetadphi", &f_tp),
        ("d2G/dtheta2", &g_tt),
    ] {
        check_bound(name, v, opt.derivative_bound)?;
    }
    let mut out = vec![0.0; n];
    for k in 0..n {
        let (e, f, g) = (m.g11[k], m.g12[k], m.g22[k]);
        let det = e * g - f * f;
        let a11 = -0.5 * e_pp[k] + f_tp[k] - 0.5 * g_tt[k];
        let a12 = 0.5 * md.e_t[k];
        let a13 = md.f_t[k] - 0.5 * md.e_p[k];
        let a21 = md.f_p[k] - 0.5 * md.g_t[k];
        let a31 = 0.5 * md.g_p[k];
        let m1 = a11 * (e * g - f * f) - a12 * (a21 * g - f * a31)
            + a13 * (a21 * f - e * a31);
        let b12 = 0.5 * md.e_p[k];
        let b13 = 0.5 * md.g_t[k];
        let m2 = -b12 * (b12 * g - f * b13) + b13 * (b12 * f - e * b13);
        out[k] = 2.0 * (m1 - m2) / (det * det);
    }
    Ok(m.wrap(out, Unit::CURVATURE))
}

/// Laplace-Beltrami operator of the 2-metric applied to a scalar field.
/// Annihilates constants exactly (all stencil weights sum to zero).
pub fn laplace_beltrami(m: &SurfaceMetric, f: &Field) -> Result<Field> {
    if m.grid.as_ref() != f.grid.as_ref() {
        return Err(Error::GridMismatch("field grid differs from metric grid".into()));
    }
    let sym = m.symmetric && f.is_sym();
    let (mm, fv);
    let (mref, fslice): (&SurfaceMetric, &[f64]) = if sym {
        (m, match &f.values {
            Values::Sym(v) => v.as_slice(),
            _ => unreachable!(),
        })
    } else {
        mm = m.to_full();
        fv = f.to_full();
        (&mm, fv.as_slice())
    };
    let v = laplace_beltrami_raw(mref, fslice);
    Ok(if sym {
        Field::from_sym(&m.grid, v, Unit(f.unit.0 - 2))
    } else {
        Field::from_full(&m.grid, v, Unit(f.unit.0 - 2))
    })
}

/// Laplacian on raw component storage; `f` must match the metric's layout.
pub(crate) fn laplace_beltrami_raw(m: &SurfaceMetric, f: &[f64]) -> Vec<f64> {
    SliceLaplacian::new(m).apply(f)
}

/// Laplace-Beltrami operator with cached metric coefficients, for repeated
/// application inside implicit solves.
pub struct SliceLaplacian {
    grid: GridRef,
    sym: bool,
    i11: Vec<f64>,
    i12: Vec<f64>,
    i22: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

impl SliceLaplacian {
    pub fn new(m: &SurfaceMetric) -> SliceLaplacian {
        let (i11, i12, i22) = m.inverse();
        let md = metric_first_derivs(m);
        let n = m.len();
        let mut b1 = vec![0.0; n];
        let mut b2 = vec![0.0; n];
        for k in 0..n {
            let c1 = i11[k] * 0.5 * md.e_t[k]
                + 2.0 * i12[k] * 0.5 * md.e_p[k]
                + i22[k] * (md.f_p[k] - 0.5 * md.g_t[k]);
            let c2 = i11[k] * (md.f_t[k] - 0.5 * md.e_p[k])
                + 2.0 * i12[k] * 0.5 * md.g_t[k]
                + i22[k] * 0.5 * md.g_p[k];
            b1[k] = -(i11[k] * c1 + i12[k] * c2);
            b2[k] = -(i12[k] * c1 + i22[k] * c2);
        }
        SliceLaplacian { grid: Arc::clone(&m.grid), sym: m.symmetric, i11, i12, i22, b1, b2 }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let d = Diff { grid: &self.grid, sym: self.sym };
        let f_t = d.dt(f, Parity::Even);
        let f_p = d.dp(f);
        let f_tt = d.dtt(f, Parity::Even);
        let f_pp = d.dpp(f);
        let f_tp = d.dtp(f, Parity::Even);
        (0..f.len())
            .map(|k| {
                self.i11[k] * f_tt[k]
                    + 2.0 * self.i12[k] * f_tp[k]
                    + self.i22[k] * f_pp[k]
                    + self.b1[k] * f_t[k]
                    + self.b2[k] * f_p[k]
            })
            .collect()
    }

    /// Rough stencil diagonal, adequate for Jacobi preconditioning.
    pub fn diag(&self) -> Vec<f64> {
        let g = &self.grid;
        let n = if self.sym { g.n_theta } else { g.node_count() };
        let h_phi = 2.0 * std::f64::consts::PI / g.n_phi as f64;
        (0..n)
            .map(|k| {
                let ring = if self.sym { k } else { k / g.n_phi };
                let dth = if ring + 1 < g.n_theta {
                    g.theta[ring + 1] - g.theta[ring]
                } else {
                    g.theta[ring] - g.theta[ring - 1]
                };
                let mut d = -2.0 * self.i11[k] / (dth * dth);
                if !self.sym {
                    d += -2.0 * self.i22[k] / (h_phi * h_phi);
                }
                d
            })
            .collect()
    }

    /// Laplacian together with the raw coordinate gradient (f_theta, f_phi).
    pub fn apply_with_grad(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = Diff { grid: &self.grid, sym: self.sym };
        let f_t = d.dt(f, Parity::Even);
        let f_p = d.dp(f);
        let f_tt = d.dtt(f, Parity::Even);
        let f_pp = d.dpp(f);
        let f_tp = d.dtp(f, Parity::Even);
        let lap = (0..f.len())
            .map(|k| {
                self.i11[k] * f_tt[k]
                    + 2.0 * self.i12[k] * f_tp[k]
                    + self.i22[k] * f_pp[k]
                    + self.b1[k] * f_t[k]
                    + self.b2[k] * f_p[k]
            })
            .collect();
        (lap, f_t, f_p)
    }

    /// Inverse metric components (shared with the cross terms of ambient
    /// operators).
    pub fn inverse_components(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.i11, &self.i12, &self.i22)
    }

    /// Gradient squared g^{kl} f_k f_l of a field.
    pub fn grad_squared(&self, f: &[f64]) -> Vec<f64> {
        let d = Diff { grid: &self.grid, sym: self.sym };
        let f_t = d.dt(f, Parity::Even);
        let f_p = d.dp(f);
        (0..f.len())
            .map(|k| {
                self.i11[k] * f_t[k] * f_t[k]
                    + 2.0 * self.i12[k] * f_t[k] * f_p[k]
                    + self.i22[k] * f_p[k] * f_p[k]
            })
            .collect()
    }
}

/// Tangential gradient squared |grad f|^2 = g^{kl} f_k f_l on a slice.
pub(crate) fn grad_squared_raw(m: &SurfaceMetric, f: &[f64]) -> Vec<f64> {
    SliceLaplacian::new(m).grad_squared(f)
}

/// A metric g = g_t(x) dx^i dx^j + u^2(x, t) dt^2 on Sigma x [t_0, t_K],
/// stored as ordered slices. Unit lapse is the Gaussian form.
#[derive(Debug, Clone)]
pub struct FoliatedMetric {
    pub grid: GridRef,
    /// Uniform storage layout for all slices.
    pub symmetric: bool,
    pub times: Vec<f64>,
    pub surfaces: Vec<SurfaceMetric>,
    /// Lapse values per slice, in the same layout as the surfaces.
    pub lapse: Vec<Vec<f64>>,
}

impl FoliatedMetric {
    pub fn new(
        grid: &GridRef,
        times: Vec<f64>,
        surfaces: Vec<SurfaceMetric>,
        lapse: Option<Vec<Vec<f64>>>,
    ) -> Result<FoliatedMetric> {
        if times.len() != surfaces.len() {
            return Err(Error::PreconditionViolated(format!(
                "{} times vs {} surfaces",
                times.len(),
                surfaces.len()
            )));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::PreconditionViolated(
                    "slice times must be strictly increasing".into(),
                ));
            }
        }
        let sym_metric = surfaces.iter().all(|s| s.symmetric);
        let sym_lapse = match &lapse {
            None => true,
            Some(ls) => ls.iter().all(|l| l.len() == grid.n_theta),
        };
        let symmetric = sym_metric && sym_lapse;
        let surfaces: Vec<SurfaceMetric> = if symmetric {
            surfaces
        } else {
            surfaces.into_iter().map(|s| s.to_full()).collect()
        };
        let n = rep_len(grid, symmetric);
        let lapse = match lapse {
            None => vec![vec![1.0; n]; times.len()],
            Some(ls) => {
                if ls.len() != times.len() {
                    return Err(Error::PreconditionViolated("one lapse slice per time".into()));
                }
                let mut out = Vec::with_capacity(ls.len());
                for l in ls {
                    let l = if l.len() == n {
                        l
                    } else if l.len() == grid.n_theta && !symmetric {
                        let mut full = vec![0.0; grid.node_count()];
                        for i in 0..grid.n_theta {
                            for j in 0..grid.n_phi {
                                full[grid.idx(i, j)] = l[i];
                            }
                        }
                        full
                    } else {
                        return Err(Error::GridMismatch("lapse layout".into()));
                    };
                    if l.iter().any(|&x| !(x > 0.0)) {
                        return Err(Error::PreconditionViolated("lapse must be positive".into()));
                    }
                    out.push(l);
                }
                out
            }
        };
        Ok(FoliatedMetric {
            grid: Arc::clone(grid),
            symmetric,
            times,
            surfaces,
            lapse,
        })
    }

    pub fn unit_lapse(grid: &GridRef, times: Vec<f64>, surfaces: Vec<SurfaceMetric>) -> Result<FoliatedMetric> {
        FoliatedMetric::new(grid, times, surfaces, None)
    }

    pub fn slice_count(&self) -> usize {
        self.times.len()
    }

    pub fn is_unit_lapse(&self) -> bool {
        self.lapse
            .iter()
            .all(|l| l.iter().all(|&x| (x - 1.0).abs() < 1e-12))
    }

    pub fn lapse_field(&self, k: usize) -> Field {
        if self.symmetric {
            Field::from_sym(&self.grid, self.lapse[k].clone(), Unit::NONE)
        } else {
            Field::from_full(&self.grid, self.lapse[k].clone(), Unit::NONE)
        }
    }

    /// Interpolation/differentiation window in t around slice k.
    fn t_window(&self, k: usize, width: usize) -> (usize, usize) {
        let n = self.times.len();
        let w = width.min(n);
        let mut start = k.saturating_sub(w / 2);
        if start + w > n {
            start = n - w;
        }
        (start, w)
    }

    /// Weights of d/dt at slice k over a window of slices.
    pub(crate) fn dt_stencil(&self, k: usize) -> (usize, Vec<f64>) {
        let (start, w) = self.t_window(k, 5);
        let pos: Vec<f64> = self.times[start..start + w].to_vec();
        let wts = crate::linalg::fd_weights(self.times[k], &pos, 1);
        (start, wts[1].clone())
    }

    /// d/dt of the metric components at slice k.
    pub(crate) fn dt_components(&self, k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (start, ws) = self.dt_stencil(k);
        let n = self.surfaces[k].len();
        let mut d11 = vec![0.0; n];
        let mut d12 = vec![0.0; n];
        let mut d22 = vec![0.0; n];
        for (off, &w) in ws.iter().enumerate() {
            let s = &self.surfaces[start + off];
            for q in 0..n {
                d11[q] += w * s.g11[q];
                d12[q] += w * s.g12[q];
                d22[q] += w * s.g22[q];
            }
        }
        (d11, d12, d22)
    }

    fn wrap(&self, v: Vec<f64>, unit: Unit) -> Field {
        if self.symmetric {
            Field::from_sym(&self.grid, v, unit)
        } else {
            Field::from_full(&self.grid, v, unit)
        }
    }
}

/// Mean curvature of the slice Sigma_k with respect to d/dt.
///
/// For unit lapse this is H = g^{ij} (d/dt g_ij) / 2; a lapse u rescales it
/// to H/u.
pub fn slice_mean_curvature(fm: &FoliatedMetric, k: usize) -> Result<Field> {
    if fm.slice_count() < 2 {
        return Err(Error::InsufficientSlices { needed: 2, got: fm.slice_count() });
    }
    let (d11, d12, d22) = fm.dt_components(k);
    let (i11, i12, i22) = fm.surfaces[k].inverse();
    let u = &fm.lapse[k];
    let n = d11.len();
    let mut h = vec![0.0; n];
    for q in 0..n {
        let unit_h = 0.5 * (i11[q] * d11[q] + 2.0 * i12[q] * d12[q] + i22[q] * d22[q]);
        h[q] = unit_h / u[q];
    }
    Ok(fm.wrap(h, Unit::INV_LENGTH))
}

/// Second fundamental form data of slice k: (H, |K|^2) with respect to the
/// unit normal (lapse included).
pub(crate) fn slice_shape(fm: &FoliatedMetric, k: usize) -> (Vec<f64>, Vec<f64>) {
    let (d11, d12, d22) = fm.dt_components(k);
    let (i11, i12, i22) = fm.surfaces[k].inverse();
    let u = &fm.lapse[k];
    let n = d11.len();
    let mut h = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    for q in 0..n {
        let k11 = 0.5 * d11[q] / u[q];
        let k12 = 0.5 * d12[q] / u[q];
        let k22 = 0.5 * d22[q] / u[q];
        let m11 = i11[q] * k11 + i12[q] * k12;
        let m12 = i11[q] * k12 + i12[q] * k22;
        let m21 = i12[q] * k11 + i22[q] * k12;
        let m22 = i12[q] * k12 + i22[q] * k22;
        h[q] = m11 + m22;
        k2[q] = m11 * m11 + 2.0 * m12 * m21 + m22 * m22;
    }
    (h, k2)
}

/// Scalar curvature of the foliated metric on every slice.
///
/// Assembled from the twice-contracted Gauss equation of the foliation:
/// R = R(g_t) - H^2 - |K|^2 - 2 dH/dn - (2/u) Lap_{g_t} u, where H and K are
/// measured with the unit normal and dH/dn = u^{-1} dH/dt. Validated against
/// the lapse evolution identity in the quasi-spherical solver tests.
pub fn ambient_scalar_curvature(fm: &FoliatedMetric) -> Result<Vec<Field>> {
    if fm.slice_count() < 3 {
        return Err(Error::InsufficientSlices { needed: 3, got: fm.slice_count() });
    }
    let ns = fm.slice_count();
    let n = rep_len(&fm.grid, fm.symmetric);
    let mut h_all: Vec<Vec<f64>> = Vec::with_capacity(ns);
    let mut k2_all: Vec<Vec<f64>> = Vec::with_capacity(ns);
    for k in 0..ns {
        let (h, k2) = slice_shape(fm, k);
        h_all.push(h);
        k2_all.push(k2);
    }
    let mut out = Vec::with_capacity(ns);
    for k in 0..ns {
        let rs = gauss_scalar_curvature(&fm.surfaces[k])?;
        let rs = match (&rs.values, fm.symmetric) {
            (Values::Sym(v), true) => v.clone(),
            _ => rs.to_full(),
        };
        let (start, ws) = fm.dt_stencil(k);
        let mut dh = vec![0.0; n];
        for (off, &w) in ws.iter().enumerate() {
            for q in 0..n {
                dh[q] += w * h_all[start + off][q];
            }
        }
        let lap_u = laplace_beltrami_raw(&fm.surfaces[k], &fm.lapse[k]);
        let u = &fm.lapse[k];
        let h = &h_all[k];
        let k2 = &k2_all[k];
        let mut r = vec![0.0; n];
        for q in 0..n {
            r[q] = rs[q] - h[q] * h[q] - k2[q] - 2.0 * dh[q] / u[q] - 2.0 * lap_u[q] / u[q];
        }
        out.push(fm.wrap(r, Unit::CURVATURE));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid;

    #[test]
    fn round_sphere_scalar_curvature() {
        let g = grid(16, 16);
        for &r in &[1.0, 3.0] {
            let m = SurfaceMetric::round(&g, r);
            let rr = gauss_scalar_curvature(&m).unwrap();
            let expect = 2.0 / (r * r);
            assert!(
                rr.sub(&Field::constant(&g, expect, Unit::CURVATURE)).sup_norm() < 1e-10,
                "r = {r}"
            );
        }
    }

    #[test]
    fn full_storage_round_sphere_curvature() {
        let g = grid(24, 24);
        let m = SurfaceMetric::round(&g, 1.5).to_full();
        let rr = gauss_scalar_curvature(&m).unwrap();
        let expect = 2.0 / 2.25;
        for i in 0..g.n_theta {
            for j in 0..g.n_phi {
                assert!((rr.at(i, j) - expect).abs() < 1e-10, "({i},{j}): {}", rr.at(i, j));
            }
        }
    }

    #[test]
    fn curvature_scaling_law() {
        let g = grid(20, 16);
        let m = SurfaceMetric::sample_sym(
            &g,
            |t| 1.0 + 0.2 * t.cos() * t.cos(),
            |t| t.sin() * t.sin() * (1.0 + 0.1 * t.cos()),
        );
        let r0 = gauss_scalar_curvature(&m).unwrap();
        for &c in &[0.5, 2.0, 10.0] {
            let rc = gauss_scalar_curvature(&m.scale(c * c)).unwrap();
            let back = rc.scale(c * c);
            let rel = back.sub(&r0).sup_norm() / r0.sup_norm();
            assert!(rel < 1e-10, "c = {c}: {rel}");
        }
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let g = grid(12, 12);
        let m = SurfaceMetric::sample_sym(&g, |t| 1.0 + 0.3 * t.cos(), |t| t.sin() * t.sin());
        let f = Field::constant(&g, 7.25, Unit::NONE);
        let lap = laplace_beltrami(&m, &f).unwrap();
        assert!(lap.sup_norm() < 1e-12);
        let lap_full = laplace_beltrami(&m.to_full(), &f).unwrap();
        assert!(lap_full.sup_norm() < 1e-12);
    }

    #[test]
    fn laplacian_eigenfunction_round_sphere() {
        let g = grid(32, 16);
        let m = SurfaceMetric::round(&g, 1.0);
        let f = Field::sample_sym(&g, Unit::NONE, |t| t.cos());
        let lap = laplace_beltrami(&m, &f).unwrap();
        let err = lap.add(&f.scale(2.0)).sup_norm();
        assert!(err < 1e-9, "l=1 eigenvalue error {err}");

        // Eigenvalue scales like 1/r^2.
        let m2 = SurfaceMetric::round(&g, 2.0);
        let lap2 = laplace_beltrami(&m2, &f).unwrap();
        let err2 = lap2.add(&f.scale(0.5)).sup_norm();
        assert!(err2 < 1e-9, "r=2 eigenvalue error {err2}");
    }

    #[test]
    fn laplacian_tesseral_harmonic_full_path() {
        // Y_22-like function: sin^2(theta) cos(2 phi), eigenvalue -6 on the
        // unit sphere.
        let g = grid(48, 64);
        let m = SurfaceMetric::round(&g, 1.0).to_full();
        let f = Field::sample(&g, Unit::NONE, |t, p| t.sin() * t.sin() * (2.0 * p).cos());
        let lap = laplace_beltrami(&m, &f).unwrap();
        let err = lap.add(&f.scale(6.0)).sup_norm();
        assert!(err < 5e-6, "l=2 eigenvalue error {err}");
    }

    #[test]
    fn mean_curvature_of_flat_cone_foliation() {
        let g = grid(8, 8);
        let times: Vec<f64> = (0..7).map(|k| k as f64 * 0.05).collect();
        let surfaces = times.iter().map(|&t| SurfaceMetric::round(&g, 1.0 + t)).collect();
        let fm = FoliatedMetric::unit_lapse(&g, times.clone(), surfaces).unwrap();
        for k in 0..fm.slice_count() {
            let h = slice_mean_curvature(&fm, k).unwrap();
            let expect = 2.0 / (1.0 + fm.times[k]);
            assert!((h.max() - expect).abs() < 1e-11);
            assert!((h.min() - expect).abs() < 1e-11);
        }
    }

    #[test]
    fn mean_curvature_lapse_rescaling() {
        let g = grid(8, 8);
        let times: Vec<f64> = (0..7).map(|k| k as f64 * 0.05).collect();
        let surfaces: Vec<SurfaceMetric> =
            times.iter().map(|&t| SurfaceMetric::round(&g, 1.0 + t)).collect();
        let lapse = vec![vec![0.5; g.n_theta]; times.len()];
        let fm = FoliatedMetric::new(&g, times.clone(), surfaces, Some(lapse)).unwrap();
        let h = slice_mean_curvature(&fm, 3).unwrap();
        let r = 1.0 + fm.times[3];
        assert!((h.max() - 4.0 / r).abs() < 1e-11);
    }

    #[test]
    fn schwarzschild_slice_mean_curvature() {
        // Area-radius form: lapse u = (1 - 2m/r)^(-1/2); H = (2/r) sqrt(1 - 2m/r).
        let g = grid(8, 8);
        let m = 0.4;
        let times: Vec<f64> = (0..9).map(|k| 2.0 + 0.05 * k as f64).collect();
        let surfaces: Vec<SurfaceMetric> =
            times.iter().map(|&r| SurfaceMetric::round(&g, r)).collect();
        let lapse: Vec<Vec<f64>> = times
            .iter()
            .map(|&r| vec![(1.0 - 2.0 * m / r).powf(-0.5); g.n_theta])
            .collect();
        let fm = FoliatedMetric::new(&g, times, surfaces, Some(lapse)).unwrap();
        let h = slice_mean_curvature(&fm, 0).unwrap();
        let expect = (2.0 / 2.0) * (1.0 - 2.0 * m / 2.0).sqrt();
        assert!((h.max() - expect).abs() < 1e-12, "{} vs {expect}", h.max());
        assert!((expect - 0.6_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ambient_curvature_vanishes_for_flat_space() {
        // The mean curvature 2/r is not polynomial in the slice coordinate,
        // so the t-stencils leave an O(h^4) residue; check it is small and
        // drops by ~16x under slice halving.
        let g = grid(12, 8);
        let sup_at = |h: f64| -> f64 {
            let times: Vec<f64> = (0..13).map(|k| 1.0 + h * k as f64).collect();
            let surfaces = times.iter().map(|&r| SurfaceMetric::round(&g, r)).collect();
            let fm = FoliatedMetric::unit_lapse(&g, times, surfaces).unwrap();
            let r = ambient_scalar_curvature(&fm).unwrap();
            r.iter().map(|rk| rk.sup_norm()).fold(0.0, f64::max)
        };
        let coarse = sup_at(0.05);
        let fine = sup_at(0.025);
        assert!(coarse < 5e-3, "coarse residue {coarse}");
        assert!(fine < coarse / 8.0, "no convergence: {coarse} -> {fine}");
    }

    #[test]
    fn ambient_curvature_vanishes_for_schwarzschild() {
        let g = grid(8, 8);
        let a = -0.8; // u = (1 + a/r)^(-1/2): vacuum solution
        let times: Vec<f64> = (0..25).map(|k| 1.5 + 0.0125 * k as f64).collect();
        let surfaces: Vec<SurfaceMetric> =
            times.iter().map(|&r| SurfaceMetric::round(&g, r)).collect();
        let lapse: Vec<Vec<f64>> = times
            .iter()
            .map(|&r| vec![(1.0 + a / r).powf(-0.5); g.n_theta])
            .collect();
        let fm = FoliatedMetric::new(&g, times, surfaces, Some(lapse)).unwrap();
        let r = ambient_scalar_curvature(&fm).unwrap();
        for (k, rk) in r.iter().enumerate() {
            // One-sided stencils at the ends are noisier; interior is clean.
            if k >= 2 && k + 2 < r.len() {
                assert!(rk.sup_norm() < 1e-5, "slice {k}: {}", rk.sup_norm());
            }
        }
    }

    #[test]
    fn insufficient_slices_is_reported() {
        let g = grid(8, 8);
        let fm = FoliatedMetric::unit_lapse(
            &g,
            vec![0.0, 0.1],
            vec![SurfaceMetric::round(&g, 1.0), SurfaceMetric::round(&g, 1.1)],
        )
        .unwrap();
        assert!(matches!(
            ambient_scalar_curvature(&fm),
            Err(Error::InsufficientSlices { .. })
        ));
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let g = grid(8, 8);
        let m = SurfaceMetric::new_sym(&g, vec![1.0; g.n_theta], vec![0.0; g.n_theta]);
        assert!(matches!(
            gauss_scalar_curvature(&m),
            Err(Error::NonPositiveDefinite(_))
        ));
    }
}
