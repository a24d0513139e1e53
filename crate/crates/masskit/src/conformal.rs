//! Linear elliptic solves on exterior manifolds and the conformal
//! bookkeeping that trades boundary mean curvature against mass.
//!
//! The manifold is a radial stack Sigma x [0, T]: a foliated metric with
//! general lapse whose slices run from the inner boundary out to the far
//! field, plus the carried scalar-curvature field and the ADM mass. Solves
//! are Delta_g w + q w = 0 with Dirichlet data on Sigma and a Robin closure
//! encoding the 1 + A/rho^(n-2) tail at the outermost slice.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Field, Unit, Values};
use crate::geometry::{slice_mean_curvature, FoliatedMetric, SliceLaplacian};
use crate::grid::GridRef;
use crate::linalg::{bicgstab_prec, fd_weights, nonuniform_simpson, tridiag_solve};
use crate::mass::{fit_expansion_from_means, unit_sphere_volume, ExpansionFit};
use crate::quasispherical::DIM;

/// Conformal Laplacian zeroth-order constant (n-2)/(4(n-1)); 1/8 for n = 3.
pub fn conformal_constant(n: usize) -> f64 {
    (n as f64 - 2.0) / (4.0 * (n as f64 - 1.0))
}

/// 4(n-1)/(n-2), the factor in R(w^(4/(n-2)) g) = w^(-(n+2)/(n-2)) (-a_n Lap w + R w).
pub fn conformal_laplacian_factor(n: usize) -> f64 {
    4.0 * (n as f64 - 1.0) / (n as f64 - 2.0)
}

/// Boundary mean curvature shift under g -> w^(4/(n-2)) g with w = 1 on the
/// boundary: H' = H + (2(n-1)/(n-2)) dw/dn.
pub fn conformal_h_shift(n: usize) -> f64 {
    2.0 * (n as f64 - 1.0) / (n as f64 - 2.0)
}

/// Predicted boundary mean curvature after a unit-boundary conformal change.
pub fn predicted_boundary_h(h_before: &Field, dwdn: &Field, n: usize) -> Field {
    h_before.add(&dwdn.scale(conformal_h_shift(n)))
}

/// An asymptotically flat exterior region: radial stack, carried scalar
/// curvature, and mass.
#[derive(Debug, Clone)]
pub struct ExteriorManifold {
    pub stack: FoliatedMetric,
    /// Scalar curvature per slice in the stack layout. Kept consistent
    /// through conformal stages by the exact transformation law.
    pub scalar: Vec<Vec<f64>>,
    pub mass: f64,
}

impl ExteriorManifold {
    pub fn new(stack: FoliatedMetric, scalar: Vec<Vec<f64>>, mass: f64) -> Result<ExteriorManifold> {
        if scalar.len() != stack.slice_count() {
            return Err(Error::PreconditionViolated(
                "one scalar-curvature slice per metric slice".into(),
            ));
        }
        let n = stack.lapse[0].len();
        if scalar.iter().any(|s| s.len() != n) {
            return Err(Error::GridMismatch("scalar slice layout".into()));
        }
        Ok(ExteriorManifold { stack, scalar, mass })
    }

    pub fn scalar_flat(stack: FoliatedMetric, mass: f64) -> Result<ExteriorManifold> {
        let n = stack.lapse[0].len();
        let ns = stack.slice_count();
        ExteriorManifold::new(stack, vec![vec![0.0; n]; ns], mass)
    }

    pub fn grid(&self) -> &GridRef {
        &self.stack.grid
    }

    pub fn rep(&self) -> usize {
        self.stack.lapse[0].len()
    }

    /// Boundary mean curvature (with the stack's lapse).
    pub fn boundary_h(&self) -> Result<Field> {
        slice_mean_curvature(&self.stack, 0)
    }

    /// Area radius sqrt(area / 4 pi) per slice.
    pub fn radii(&self) -> Vec<f64> {
        self.stack
            .surfaces
            .iter()
            .map(|s| (s.area() / (4.0 * std::f64::consts::PI)).sqrt())
            .collect()
    }

    pub fn min_scalar(&self) -> f64 {
        self.scalar
            .iter()
            .flat_map(|s| s.iter())
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn max_scalar(&self) -> f64 {
        self.scalar
            .iter()
            .flat_map(|s| s.iter())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    fn wrap(&self, v: Vec<f64>, unit: Unit) -> Field {
        if self.stack.symmetric {
            Field::from_sym(self.grid(), v, unit)
        } else {
            Field::from_full(self.grid(), v, unit)
        }
    }
}

/// Zeroth-order problem data: solve Delta_g w + q w = 0.
#[derive(Debug, Clone)]
pub struct EllipticProblem<'a> {
    pub manifold: &'a ExteriorManifold,
    /// Signed zeroth-order coefficient per slice (stack layout).
    pub potential: Vec<Vec<f64>>,
    pub boundary_value: f64,
    pub value_at_infinity: f64,
}

impl<'a> EllipticProblem<'a> {
    pub fn harmonic(man: &'a ExteriorManifold, boundary: f64, infinity: f64) -> EllipticProblem<'a> {
        let n = man.rep();
        EllipticProblem {
            manifold: man,
            potential: vec![vec![0.0; n]; man.stack.slice_count()],
            boundary_value: boundary,
            value_at_infinity: infinity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    /// Per-slice solution values (stack layout).
    pub w: Vec<Vec<f64>>,
    pub fit: ExpansionFit,
    /// dw/dn at Sigma (outward unit normal).
    pub normal_derivative: Field,
    /// Relative algebraic residual of the linear solve.
    pub residual: f64,
    /// Maximum-principle guarantees void (q changes sign).
    pub indefinite_potential: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EllipticOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Number of outermost slices used for the expansion fit.
    pub fit_slices: usize,
}

impl Default for EllipticOptions {
    fn default() -> Self {
        EllipticOptions { rel_tol: 1e-10, max_iter: 40_000, fit_slices: 24 }
    }
}

/// Discretized elliptic operator on the stack.
pub(crate) struct StackOperator<'a> {
    man: &'a ExteriorManifold,
    n: usize,
    ns: usize,
    laps: Vec<SliceLaplacian>,
    inv_u2: Vec<Vec<f64>>,
    /// Coefficient of w_t in (1/u^2)(w_tt + c w_t): c = H_unit - u_t/u.
    c_t: Vec<Vec<f64>>,
    /// Cross-term coefficients a1, a2 with a.grad(w) = a1 w_theta + a2 w_phi.
    cross: Vec<(Vec<f64>, Vec<f64>)>,
    t1: Vec<(usize, Vec<f64>)>,
    t2: Vec<(usize, Vec<f64>)>,
    q: Vec<Vec<f64>>,
    radii: Vec<f64>,
    bval: f64,
    winf: f64,
    /// Row scaling making the tridiagonal diagonal 1.
    row_scale: Vec<Vec<f64>>,
    tri_lower: Vec<Vec<f64>>,
    tri_upper: Vec<Vec<f64>>,
}

impl<'a> StackOperator<'a> {
    pub fn new(p: &EllipticProblem<'a>) -> Result<StackOperator<'a>> {
        let man = p.manifold;
        let stack = &man.stack;
        let ns = stack.slice_count();
        if ns < 5 {
            return Err(Error::InsufficientSlices { needed: 5, got: ns });
        }
        let n = man.rep();
        if p.potential.len() != ns || p.potential.iter().any(|s| s.len() != n) {
            return Err(Error::GridMismatch("potential layout".into()));
        }
        let d = crate::geometry::Diff { grid: stack.grid.as_ref(), sym: stack.symmetric };

        let mut laps = Vec::with_capacity(ns);
        let mut inv_u2: Vec<Vec<f64>> = Vec::with_capacity(ns);
        let mut cross = Vec::with_capacity(ns);
        for k in 0..ns {
            let lap = SliceLaplacian::new(&stack.surfaces[k]);
            let u = &stack.lapse[k];
            inv_u2.push(u.iter().map(|&x| 1.0 / (x * x)).collect());
            let log_u: Vec<f64> = u.iter().map(|&x| x.ln()).collect();
            let lu_t = d.dt(&log_u, crate::grid::Parity::Even);
            let lu_p = d.dp(&log_u);
            let (i11, i12, i22) = lap.inverse_components();
            let a1: Vec<f64> = (0..n).map(|q| i11[q] * lu_t[q] + i12[q] * lu_p[q]).collect();
            let a2: Vec<f64> = (0..n).map(|q| i12[q] * lu_t[q] + i22[q] * lu_p[q]).collect();
            cross.push((a1, a2));
            laps.push(lap);
        }

        // Unit-lapse slice mean curvature and lapse time-derivative.
        let mut t1 = Vec::with_capacity(ns);
        let mut t2 = Vec::with_capacity(ns);
        for k in 0..ns {
            let (start, w) = stack_window(&stack.times, k, 7);
            let wts = fd_weights(stack.times[k], &stack.times[start..start + w], 2);
            t1.push((start, wts[1].clone()));
            t2.push((start, wts[2].clone()));
        }
        let mut c_t = Vec::with_capacity(ns);
        for k in 0..ns {
            let (d11, d12, d22) = stack.dt_components(k);
            let (i11, i12, i22) = stack.surfaces[k].inverse();
            let (start, ws) = &t1[k];
            let mut u_t = vec![0.0; n];
            for (off, &w) in ws.iter().enumerate() {
                for q in 0..n {
                    u_t[q] += w * stack.lapse[start + off][q];
                }
            }
            let u = &stack.lapse[k];
            let c: Vec<f64> = (0..n)
                .map(|q| {
                    let h_unit =
                        0.5 * (i11[q] * d11[q] + 2.0 * i12[q] * d12[q] + i22[q] * d22[q]);
                    h_unit - u_t[q] / u[q]
                })
                .collect();
            c_t.push(c);
        }

        let radii = man.radii();

        // Tridiagonal radial skeleton for preconditioning and row scaling.
        let mut row_scale = vec![vec![0.0; n]; ns];
        let mut tri_lower = vec![vec![0.0; n]; ns];
        let mut tri_upper = vec![vec![0.0; n]; ns];
        for k in 0..ns {
            if k == 0 {
                for q in 0..n {
                    row_scale[0][q] = 1.0;
                    tri_lower[0][q] = 0.0;
                    tri_upper[0][q] = 0.0;
                }
                continue;
            }
            if k == ns - 1 {
                let h = stack.times[ns - 1] - stack.times[ns - 2];
                for q in 0..n {
                    let u = stack.lapse[ns - 1][q];
                    let diag = 1.0 / (u * h) + (DIM as f64 - 2.0) / radii[ns - 1];
                    row_scale[k][q] = 1.0 / diag;
                    tri_lower[k][q] = (-1.0 / (u * h)) / diag;
                    tri_upper[k][q] = 0.0;
                }
                continue;
            }
            let h0 = stack.times[k] - stack.times[k - 1];
            let h1 = stack.times[k + 1] - stack.times[k];
            let d2 = [
                2.0 / (h0 * (h0 + h1)),
                -2.0 / (h0 * h1),
                2.0 / (h1 * (h0 + h1)),
            ];
            let d1 = [
                -h1 / (h0 * (h0 + h1)),
                (h1 - h0) / (h0 * h1),
                h0 / (h1 * (h0 + h1)),
            ];
            let lap_diag = laps[k].diag();
            for q in 0..n {
                let a = inv_u2[k][q];
                let c = c_t[k][q];
                let lo = a * (d2[0] + c * d1[0]);
                let di = a * (d2[1] + c * d1[1]) + lap_diag[q] + p.potential[k][q];
                let up = a * (d2[2] + c * d1[2]);
                let s = 1.0 / di;
                row_scale[k][q] = s;
                tri_lower[k][q] = lo * s;
                tri_upper[k][q] = up * s;
            }
        }

        Ok(StackOperator {
            man,
            n,
            ns,
            laps,
            inv_u2,
            c_t,
            cross,
            t1,
            t2,
            q: p.potential.clone(),
            radii,
            bval: p.boundary_value,
            winf: p.value_at_infinity,
            row_scale,
            tri_lower,
            tri_upper,
        })
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        let (n, ns) = (self.n, self.ns);
        let stack = &self.man.stack;
        let mut out = vec![0.0; n * ns];
        // Radial derivatives at every slice.
        let mut w_t = vec![0.0; n * ns];
        let mut w_tt = vec![0.0; n * ns];
        for k in 0..ns {
            let (s1, ws1) = &self.t1[k];
            for (off, &c) in ws1.iter().enumerate() {
                let src = (s1 + off) * n;
                for q in 0..n {
                    w_t[k * n + q] += c * w[src + q];
                }
            }
            let (s2, ws2) = &self.t2[k];
            for (off, &c) in ws2.iter().enumerate() {
                let src = (s2 + off) * n;
                for q in 0..n {
                    w_tt[k * n + q] += c * w[src + q];
                }
            }
        }
        // Dirichlet row.
        for q in 0..n {
            out[q] = w[q];
        }
        // Interior rows.
        for k in 1..ns - 1 {
            let wk = &w[k * n..(k + 1) * n];
            let (lap, g_t, g_p) = self.laps[k].apply_with_grad(wk);
            let (a1, a2) = &self.cross[k];
            for q in 0..n {
                let v = self.inv_u2[k][q] * (w_tt[k * n + q] + self.c_t[k][q] * w_t[k * n + q])
                    + lap[q]
                    + a1[q] * g_t[q]
                    + a2[q] * g_p[q]
                    + self.q[k][q] * wk[q];
                out[k * n + q] = v * self.row_scale[k][q];
            }
        }
        // Robin row: (1/u) w_t + (n-2)(w - winf)/R = 0; the winf part lives
        // in the rhs.
        let k = ns - 1;
        for q in 0..n {
            let u = stack.lapse[k][q];
            let v = w_t[k * n + q] / u + (DIM as f64 - 2.0) / self.radii[k] * w[k * n + q];
            out[k * n + q] = v * self.row_scale[k][q];
        }
        out
    }

    fn rhs(&self) -> Vec<f64> {
        let (n, ns) = (self.n, self.ns);
        let mut b = vec![0.0; n * ns];
        for q in 0..n {
            b[q] = self.bval;
        }
        let k = ns - 1;
        for q in 0..n {
            b[k * n + q] = (DIM as f64 - 2.0) / self.radii[k] * self.winf * self.row_scale[k][q];
        }
        b
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let (n, ns) = (self.n, self.ns);
        let mut out = r.to_vec();
        let diag = vec![1.0; ns];
        let mut lower = vec![0.0; ns];
        let mut upper = vec![0.0; ns];
        let mut col = vec![0.0; ns];
        for q in 0..n {
            for k in 0..ns {
                lower[k] = self.tri_lower[k][q];
                upper[k] = self.tri_upper[k][q];
                col[k] = r[k * n + q];
            }
            tridiag_solve(&lower, &diag, &upper, &mut col);
            for k in 0..ns {
                out[k * n + q] = col[k];
            }
        }
        out
    }
}

fn stack_window(times: &[f64], k: usize, width: usize) -> (usize, usize) {
    let n = times.len();
    let w = width.min(n);
    let mut start = k.saturating_sub(w / 2);
    if start + w > n {
        start = n - w;
    }
    (start, w)
}

/// Solve Delta_g w + q w = 0 on the exterior stack with w = boundary_value
/// on Sigma and a Robin far-field closure for w -> value_at_infinity.
pub fn solve_elliptic(p: &EllipticProblem) -> Result<EllipticSolution> {
    solve_elliptic_with(p, &EllipticOptions::default())
}

pub fn solve_elliptic_with(p: &EllipticProblem, opt: &EllipticOptions) -> Result<EllipticSolution> {
    let op = StackOperator::new(p)?;
    let (n, ns) = (op.n, op.ns);
    let indefinite = {
        let mut pos = false;
        let mut neg = false;
        for s in &p.potential {
            for &v in s {
                if v > 1e-14 {
                    pos = true;
                }
                if v < -1e-14 {
                    neg = true;
                }
            }
        }
        pos && neg
    };
    if indefinite {
        log::warn!("elliptic potential changes sign: maximum-principle guarantees void");
    }
    let b = op.rhs();
    // Initial guess: linear blend from boundary to infinity value.
    let mut x0 = vec![0.0; n * ns];
    for k in 0..ns {
        let s = k as f64 / (ns - 1) as f64;
        let v = p.boundary_value * (1.0 - s) + p.value_at_infinity * s;
        for q in 0..n {
            x0[k * n + q] = v;
        }
    }
    let sol = bicgstab_prec(
        |v: &[f64]| op.apply(v),
        &b,
        &x0,
        |r: &[f64]| op.precondition(r),
        opt.rel_tol,
        opt.max_iter,
    )?;
    let resid = {
        let av = op.apply(&sol);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..av.len() {
            num += (av[i] - b[i]) * (av[i] - b[i]);
            den += b[i] * b[i];
        }
        (num / den.max(1e-300)).sqrt()
    };

    let w: Vec<Vec<f64>> = (0..ns).map(|k| sol[k * n..(k + 1) * n].to_vec()).collect();

    // Expansion fit on the outermost slices.
    let radii = op.radii;
    let fit_from = ns.saturating_sub(opt.fit_slices.max(6)).max(ns / 2);
    let means: Vec<(f64, f64)> = (fit_from..ns)
        .map(|k| (radii[k], p.manifold.wrap(w[k].clone(), Unit::NONE).mean_round()))
        .collect();
    // Rescale so the tail tends to 1 before fitting, then undo.
    let winf = p.value_at_infinity;
    let fit = if winf.abs() > 1e-14 {
        let scaled: Vec<(f64, f64)> = means.iter().map(|(r, m)| (*r, m / winf)).collect();
        let f = fit_expansion_from_means(&scaled, DIM)?;
        ExpansionFit { a: f.a * winf, residual: f.residual * winf.abs(), shells_used: f.shells_used }
    } else {
        // Tail tends to 0: fit directly against rho^(2-n).
        let p2: Vec<f64> = means.iter().map(|(r, _)| r.powi(2 - DIM as i32)).collect();
        let p1: Vec<f64> = means.iter().map(|(r, _)| r.powi(1 - DIM as i32)).collect();
        let rhs: Vec<f64> = means.iter().map(|(_, u)| *u).collect();
        let coef = crate::linalg::least_squares(&[p2, p1], &rhs)?;
        ExpansionFit { a: coef[0], residual: 0.0, shells_used: means.iter().map(|m| m.0).collect() }
    };

    // dw/dn at Sigma.
    let (start, wwidth) = stack_window(&p.manifold.stack.times, 0, 7);
    let wts = fd_weights(
        p.manifold.stack.times[0],
        &p.manifold.stack.times[start..start + wwidth],
        1,
    );
    let mut dn = vec![0.0; n];
    for (off, &c) in wts[1].iter().enumerate() {
        for q in 0..n {
            dn[q] += c * w[start + off][q];
        }
    }
    for q in 0..n {
        dn[q] /= p.manifold.stack.lapse[0][q];
    }
    let normal_derivative = p.manifold.wrap(dn, Unit::INV_LENGTH);

    Ok(EllipticSolution {
        w,
        fit,
        normal_derivative,
        residual: resid,
        indefinite_potential: indefinite,
    })
}

/// Volume integral of per-slice nodal values over the stack.
pub(crate) fn volume_integral(man: &ExteriorManifold, f: &[Vec<f64>]) -> f64 {
    let stack = &man.stack;
    let ns = stack.slice_count();
    let vals: Vec<f64> = (0..ns)
        .map(|k| {
            let u = &stack.lapse[k];
            let integrand: Vec<f64> = f[k].iter().zip(u).map(|(a, b)| a * b).collect();
            stack.surfaces[k].integrate(&man.wrap(integrand, Unit::NONE))
        })
        .collect();
    nonuniform_simpson(&stack.times, &vals)
}

/// Independent evaluation of the expansion coefficient from the energy
/// identity: (2-n) w_(n-1) A w_out = int(|grad w|^2 - q w^2) dV
/// + oint_Sigma w dw/dn dmu, where w_out is the measured tail value (this
/// keeps the identity exact on the truncated domain).
pub fn energy_identity_a(sol: &EllipticSolution, p: &EllipticProblem) -> Result<f64> {
    let man = p.manifold;
    let stack = &man.stack;
    let ns = stack.slice_count();
    let n = man.rep();
    if sol.w.len() != ns {
        return Err(Error::GridMismatch("solution does not match manifold".into()));
    }
    // |grad w|^2 per slice: tangential + (1/u^2) w_t^2.
    let mut t_rows = Vec::with_capacity(ns);
    for k in 0..ns {
        let (start, w) = stack_window(&stack.times, k, 7);
        let wts = fd_weights(stack.times[k], &stack.times[start..start + w], 1);
        t_rows.push((start, wts[1].clone()));
    }
    let mut integrand = Vec::with_capacity(ns);
    for k in 0..ns {
        let lap = SliceLaplacian::new(&stack.surfaces[k]);
        let tang = lap.grad_squared(&sol.w[k]);
        let (start, ws) = &t_rows[k];
        let mut w_t = vec![0.0; n];
        for (off, &c) in ws.iter().enumerate() {
            for q in 0..n {
                w_t[q] += c * sol.w[start + off][q];
            }
        }
        let u = &stack.lapse[k];
        let row: Vec<f64> = (0..n)
            .map(|q| {
                tang[q] + w_t[q] * w_t[q] / (u[q] * u[q])
                    - p.potential[k][q] * sol.w[k][q] * sol.w[k][q]
            })
            .collect();
        integrand.push(row);
    }
    let vol = volume_integral(man, &integrand);
    let wdn: Vec<f64> = (0..n).map(|q| {
        let d = match &sol.normal_derivative.values {
            Values::Sym(v) => v[q],
            Values::Full(v) => v[q],
        };
        sol.w[0][q] * d
    }).collect();
    let boundary = stack.surfaces[0].integrate(&man.wrap(wdn, Unit::NONE));
    let w_out = man.wrap(sol.w[ns - 1].clone(), Unit::NONE).mean_round();
    if w_out.abs() < 1e-12 {
        return Err(Error::QuadratureUnderResolved(
            "outer tail value vanishes; identity ill-posed".into(),
        ));
    }
    let omega = unit_sphere_volume(DIM);
    Ok((vol + boundary) / ((2.0 - DIM as f64) * omega * w_out))
}

/// Conformal change g -> w^(4/(n-2)) g with the carried scalar curvature
/// recomputed through the exact transformation law. `q` is the potential of
/// the elliptic equation the factor solves (Delta w = -q w), which closes
/// the law algebraically; pass zeros for a harmonic factor.
pub fn conformal_transform_solved(
    man: &ExteriorManifold,
    w: &[Vec<f64>],
    q: &[Vec<f64>],
) -> Result<ExteriorManifold> {
    let stack = &man.stack;
    let ns = stack.slice_count();
    let n = man.rep();
    let nn = DIM as f64;
    let a_n = conformal_laplacian_factor(DIM);
    let mut min_w = f64::INFINITY;
    for s in w {
        for &v in s {
            min_w = min_w.min(v);
        }
    }
    if !(min_w > 0.0) {
        return Err(Error::NonPositiveFactor(min_w));
    }
    let e_metric = 4.0 / (nn - 2.0);
    let e_lapse = 2.0 / (nn - 2.0);
    let mut surfaces = Vec::with_capacity(ns);
    let mut lapse = Vec::with_capacity(ns);
    let mut scalar = Vec::with_capacity(ns);
    for k in 0..ns {
        let wk = &w[k];
        let factor: Vec<f64> = wk.iter().map(|&x| x.powf(e_metric)).collect();
        let field = man.wrap(factor.clone(), Unit::NONE);
        surfaces.push(stack.surfaces[k].scaled_by(&field));
        lapse.push(
            stack.lapse[k]
                .iter()
                .zip(wk)
                .map(|(&u, &x)| u * x.powf(e_lapse))
                .collect(),
        );
        scalar.push(
            (0..n)
                .map(|iq| {
                    wk[iq].powf(-e_metric) * (man.scalar[k][iq] + a_n * q[k][iq])
                })
                .collect(),
        );
    }
    let new_stack = FoliatedMetric::new(&stack.grid, stack.times.clone(), surfaces, Some(lapse))?;
    // Mass law m' = w_inf^(2/(n-2)) (m + (n-1) A / w_inf): the chart is
    // renormalized by the factor's limit at infinity before the expansion
    // mass is read off. For w_inf = 1 this is the plain shift by (n-1) A.
    let radii = man.radii();
    let fit_from = ns.saturating_sub(24).max(ns / 2);
    let means: Vec<(f64, f64)> = (fit_from..ns)
        .map(|k| (radii[k], man.wrap(w[k].clone(), Unit::NONE).mean_round()))
        .collect();
    let (w_inf, a_w, _res) = crate::mass::fit_tail_with_limit(&means, DIM)?;
    if !(w_inf > 0.0) {
        return Err(Error::NonPositiveFactor(w_inf));
    }
    let mass = w_inf.powf(2.0 / (nn - 2.0)) * (man.mass + (nn - 1.0) * a_w / w_inf);
    ExteriorManifold::new(new_stack, scalar, mass)
}

/// Result of the mean-curvature tilt.
#[derive(Debug)]
pub struct TiltResult {
    pub manifold: ExteriorManifold,
    pub psi: EllipticSolution,
    /// Measured boundary mean curvature after the tilt.
    pub h_measured: Field,
    /// H(Sigma) - (2s/(n-2)) dpsi/dn prediction.
    pub h_predicted: Field,
    pub mass_before: f64,
    pub mass_after: f64,
}

/// Tilt the boundary mean curvature down using the harmonic potential psi
/// (psi = 0 on Sigma, 1 at infinity): the boundary mean curvature drops by
/// exactly (2s/(n-2)) dpsi/dn while the boundary metric is untouched and
/// the mass tends to the original as s -> 0. Internally the conformal
/// factor is 1 - (s/(n-1)) psi, which realizes that drop under the true
/// transformation law H' = H + (2(n-1)/(n-2)) dw/dn.
pub fn tilt_metric(man: &ExteriorManifold, s: f64) -> Result<TiltResult> {
    if !(s >= 0.0 && s < 1.0) {
        return Err(Error::PreconditionViolated(format!("tilt s = {s} outside [0, 1)")));
    }
    let p = EllipticProblem::harmonic(man, 0.0, 1.0);
    let psi = solve_elliptic(&p)?;
    if !(psi.normal_derivative.min() > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "dpsi/dn must be positive on Sigma (strong maximum principle), min = {}",
            psi.normal_derivative.min()
        )));
    }
    let h_before = man.boundary_h()?;
    let ns = man.stack.slice_count();
    let n = man.rep();
    let nn = DIM as f64;
    let s_eff = s / (nn - 1.0);
    let w: Vec<Vec<f64>> = (0..ns)
        .map(|k| psi.w[k].iter().map(|&x| 1.0 - s_eff * x).collect())
        .collect();
    let q0 = vec![vec![0.0; n]; ns];
    let out = conformal_transform_solved(man, &w, &q0)?;
    let mass_after = out.mass;

    let h_measured = out.boundary_h()?;
    let h_predicted = h_before.sub(&psi.normal_derivative.scale(2.0 * s / (nn - 2.0)));
    Ok(TiltResult {
        manifold: out,
        psi,
        h_measured,
        h_predicted,
        mass_before: man.mass,
        mass_after,
    })
}

/// Interpolated conformal factor 1 + t (v - 1) applied to the manifold.
pub fn interpolate_conformal(
    man: &ExteriorManifold,
    v: &EllipticSolution,
    v_potential: &[Vec<f64>],
    t: f64,
) -> Result<ExteriorManifold> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::PreconditionViolated(format!("t = {t} outside [0, 1]")));
    }
    let ns = man.stack.slice_count();
    let n = man.rep();
    let w: Vec<Vec<f64>> = (0..ns)
        .map(|k| v.w[k].iter().map(|&x| 1.0 + t * (x - 1.0)).collect())
        .collect();
    // Delta w_t = t Delta v = -t q v: express as a potential against w_t:
    // q_t = t q v / w_t.
    let qt: Vec<Vec<f64>> = (0..ns)
        .map(|k| {
            (0..n)
                .map(|iq| {
                    let wt = 1.0 + t * (v.w[k][iq] - 1.0);
                    t * v_potential[k][iq] * v.w[k][iq] / wt
                })
                .collect()
        })
        .collect();
    conformal_transform_solved(man, &w, &qt)
}

/// Static-descent diagnostics: the conformal path driven by the solution of
/// Delta u - c_n R u = 0 with unit boundary data.
#[derive(Debug)]
pub struct StaticDescent {
    pub a: f64,
    pub dudn: Field,
    /// (t, mass) along the path g_t = (1 + t(u-1))^(4/(n-2)) g.
    pub path: Vec<(f64, f64)>,
    pub solution: EllipticSolution,
    /// The path is trivial (the manifold is already scalar flat).
    pub trivial: bool,
}

/// Probe whether mass can be shed by leveling scalar curvature: if R != 0
/// the descent coefficient A is strictly negative and the path masses
/// decrease linearly.
pub fn static_descent(man: &ExteriorManifold) -> Result<StaticDescent> {
    if man.min_scalar() < -1e-8 {
        return Err(Error::PreconditionViolated(format!(
            "static descent needs R >= 0, min = {:.3e}",
            man.min_scalar()
        )));
    }
    let ns = man.stack.slice_count();
    let n = man.rep();
    let cn = conformal_constant(DIM);
    if man.max_scalar() <= 1e-12 {
        let sol = EllipticSolution {
            w: vec![vec![1.0; n]; ns],
            fit: ExpansionFit { a: 0.0, residual: 0.0, shells_used: Vec::new() },
            normal_derivative: man.wrap(vec![0.0; n], Unit::INV_LENGTH),
            residual: 0.0,
            indefinite_potential: false,
        };
        return Ok(StaticDescent {
            a: 0.0,
            dudn: sol.normal_derivative.clone(),
            path: vec![(0.0, man.mass), (1.0, man.mass)],
            solution: sol,
            trivial: true,
        });
    }
    let potential: Vec<Vec<f64>> = man
        .scalar
        .iter()
        .map(|s| s.iter().map(|&r| -cn * r).collect())
        .collect();
    let p = EllipticProblem {
        manifold: man,
        potential,
        boundary_value: 1.0,
        value_at_infinity: 1.0,
    };
    let sol = solve_elliptic(&p)?;
    let a = sol.fit.a;
    let nn = DIM as f64;
    let path: Vec<(f64, f64)> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&t| (t, man.mass + (nn - 1.0) * t * a))
        .collect();
    Ok(StaticDescent {
        a,
        dudn: sol.normal_derivative.clone(),
        path,
        solution: sol,
        trivial: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{flat_exterior_manifold, log_radii};
    use crate::field::grid;

    #[test]
    fn harmonic_exterior_solution() {
        let g = grid(8, 8);
        let man = flat_exterior_manifold(&g, 1.0, 400.0, 161);
        let p = EllipticProblem::harmonic(&man, 0.0, 1.0);
        let sol = solve_elliptic(&p).unwrap();
        // w = 1 - 1/r.
        let radii = man.radii();
        let mut worst = 0.0_f64;
        for (k, wk) in sol.w.iter().enumerate() {
            let exact = 1.0 - 1.0 / radii[k];
            for &v in wk {
                worst = worst.max((v - exact).abs());
            }
        }
        assert!(worst < 1e-6, "sup error {worst:.3e}");
        assert!((sol.normal_derivative.max() - 1.0).abs() < 1e-5);
        assert!((sol.fit.a + 1.0).abs() < 1e-4, "A = {}", sol.fit.a);
    }

    #[test]
    fn constants_solve_homogeneous_problem() {
        let g = grid(8, 8);
        let man = flat_exterior_manifold(&g, 1.0, 400.0, 121);
        let p = EllipticProblem::harmonic(&man, 1.0, 1.0);
        let sol = solve_elliptic(&p).unwrap();
        for wk in &sol.w {
            for &v in wk {
                assert!((v - 1.0).abs() < 1e-10);
            }
        }
        assert!(sol.fit.a.abs() < 1e-10);
    }

    #[test]
    fn energy_identity_matches_fit() {
        let g = grid(8, 8);
        let man = flat_exterior_manifold(&g, 1.0, 400.0, 161);
        let p = EllipticProblem::harmonic(&man, 0.0, 1.0);
        let sol = solve_elliptic(&p).unwrap();
        let a_id = energy_identity_a(&sol, &p).unwrap();
        assert!((a_id + 1.0).abs() < 1e-4, "A_id = {a_id}");
        assert!(
            (a_id - sol.fit.a).abs() / sol.fit.a.abs() < 1e-4,
            "A_id = {a_id} vs fit {}",
            sol.fit.a
        );
    }

    #[test]
    fn tilt_shifts_boundary_mean_curvature() {
        let g = grid(8, 8);
        let man = flat_exterior_manifold(&g, 1.0, 400.0, 161);
        let s = 0.1;
        let tilt = tilt_metric(&man, s).unwrap();
        // dpsi/dn = 1 for the unit ball: H drops from 2 to 1.8.
        let h = tilt.h_measured.max();
        assert!((h - 1.8).abs() < 1e-4, "H after tilt {h}");
        let hp = tilt.h_predicted.max();
        assert!((h - hp).abs() < 1e-4);
        // Boundary metric unchanged.
        assert!(
            tilt.manifold.stack.surfaces[0]
                .component_distance(&man.stack.surfaces[0])
                < 1e-12
        );
        // s -> 0 mass continuity: |m(g_s) - m| <= 3 s (1 + |m|).
        for &ss in &[0.05, 0.02, 0.01] {
            let t = tilt_metric(&man, ss).unwrap();
            assert!(
                (t.mass_after - man.mass).abs() <= 3.0 * ss * (1.0 + man.mass.abs()),
                "s = {ss}: mass {}",
                t.mass_after
            );
        }
        // s = 0 is the identity.
        let t0 = tilt_metric(&man, 0.0).unwrap();
        assert!((t0.mass_after - man.mass).abs() < 1e-9);
        let d = t0.manifold.stack.surfaces[80].component_distance(&man.stack.surfaces[80]);
        assert!(d < 1e-12);
    }

    #[test]
    fn conformal_transform_identity_and_composition() {
        let g = grid(8, 8);
        let man = flat_exterior_manifold(&g, 1.0, 200.0, 97);
        let ns = man.stack.slice_count();
        let n = man.rep();
        let ones = vec![vec![1.0; n]; ns];
        let zeros = vec![vec![0.0; n]; ns];
        let id = conformal_transform_solved(&man, &ones, &zeros).unwrap();
        for k in 0..ns {
            assert_eq!(id.stack.surfaces[k].g11, man.stack.surfaces[k].g11);
            assert_eq!(id.stack.surfaces[k].g22, man.stack.surfaces[k].g22);
        }

        // Composition w1 then w2 equals w1*w2.
        let radii = man.radii();
        let w1: Vec<Vec<f64>> = radii.iter().map(|&r| vec![1.0 + 0.2 / r; n]).collect();
        let w2: Vec<Vec<f64>> = radii.iter().map(|&r| vec![1.0 - 0.1 / r; n]).collect();
        let w12: Vec<Vec<f64>> = (0..ns)
            .map(|k| (0..n).map(|q| w1[k][q] * w2[k][q]).collect())
            .collect();
        let step = conformal_transform_solved(
            &conformal_transform_solved(&man, &w1, &zeros).unwrap(),
            &w2,
            &zeros,
        )
        .unwrap();
        let direct = conformal_transform_solved(&man, &w12, &zeros).unwrap();
        for k in 0..ns {
            let d = step.stack.surfaces[k].component_distance(&direct.stack.surfaces[k]);
            assert!(d < 1e-10 * (1.0 + radii[k] * radii[k]), "slice {k}: {d:.3e}");
        }
    }

    #[test]
    fn conformal_factor_gives_schwarzschild_mass() {
        // w = 1 + 0.5/r on the flat exterior: isotropic Schwarzschild m = 1.
        let g = grid(8, 8);
        let man = flat_exterior_manifold(&g, 1.0, 400.0, 161);
        let ns = man.stack.slice_count();
        let n = man.rep();
        let radii = man.radii();
        let zeros = vec![vec![0.0; n]; ns];
        let w: Vec<Vec<f64>> = radii.iter().map(|&r| vec![1.0 + 0.5 / r; n]).collect();
        let out = conformal_transform_solved(&man, &w, &zeros).unwrap();
        assert!((out.mass - 1.0).abs() < 1e-3, "mass {}", out.mass);
    }

    #[test]
    fn conformal_h_law_on_boundary() {
        // Harmonic w with w = 1 on Sigma and dw/dn = -0.3: H drops by 0.6.
        let g = grid(8, 8);
        let man = flat_exterior_manifold(&g, 1.0, 400.0, 161);
        let ns = man.stack.slice_count();
        let n = man.rep();
        let radii = man.radii();
        let zeros = vec![vec![0.0; n]; ns];
        // w = a + b/r with w(1) = 1, w'(1) = -0.3: b = 0.3, a = 0.7. The
        // boundary mean curvature shifts by (2(n-1)/(n-2)) dw/dn = -1.2.
        let w: Vec<Vec<f64>> = radii.iter().map(|&r| vec![0.7 + 0.3 / r; n]).collect();
        let out = conformal_transform_solved(&man, &w, &zeros).unwrap();
        let h = slice_mean_curvature(&out.stack, 0).unwrap();
        assert!((h.max() - 0.8).abs() < 1e-4, "H {}", h.max());
        let dwdn = man.wrap(vec![-0.3; n], Unit::INV_LENGTH);
        let pred = predicted_boundary_h(&man.boundary_h().unwrap(), &dwdn, DIM);
        assert!((h.max() - pred.max()).abs() < 1e-4);
    }

    #[test]
    fn static_descent_on_bump() {
        let g = grid(8, 8);
        let man = crate::catalog::conformal_bump_manifold(&g, 0.05, 2.0, 0.5, 400.0, 201);
        assert!(man.min_scalar() >= 0.0);
        assert!(man.max_scalar() > 1e-4);
        let sd = static_descent(&man).unwrap();
        assert!(!sd.trivial);
        assert!(sd.a < 0.0, "A = {}", sd.a);
        assert!(sd.dudn.max() < 0.0, "du/dn = {}", sd.dudn.max());
        // Path masses decrease linearly.
        for w in sd.path.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
        // Linear response: shrinking the bump by 4 shrinks |A| by ~4.
        let man_small = crate::catalog::conformal_bump_manifold(&g, 0.0125, 2.0, 0.5, 400.0, 201);
        let sd_small = static_descent(&man_small).unwrap();
        let ratio = sd.a / sd_small.a;
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");

        // Scalar-flat manifold: trivial path.
        let flat = flat_exterior_manifold(&g, 1.0, 400.0, 121);
        let sd_flat = static_descent(&flat).unwrap();
        assert!(sd_flat.trivial);
        assert_eq!(sd_flat.a, 0.0);
        let _ = log_radii(1.0, 2.0, 3);
    }
}
