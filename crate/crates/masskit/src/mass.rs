//! Mass functionals: ADM flux integral on asymptotic shells, the
//! conformal-expansion mass (n-1)A, and the Hawking mass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::geometry::{slice_mean_curvature, FoliatedMetric};
use crate::grid::GridRef;
use crate::linalg::least_squares;

/// Volume of the unit (n-1)-sphere in R^n; 4 pi for n = 3.
pub fn unit_sphere_volume(n: usize) -> f64 {
    // 2 pi^(n/2) / Gamma(n/2), for integer n >= 2.
    let pi = std::f64::consts::PI;
    let gamma_half = if n % 2 == 0 {
        // Gamma(k) = (k-1)!
        let k = n / 2;
        (1..k).map(|i| i as f64).product::<f64>()
    } else {
        // Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
        let k = (n - 1) / 2;
        let mut v = pi.sqrt();
        for i in 0..k {
            v *= i as f64 + 0.5;
        }
        v
    };
    2.0 * pi.powf(n as f64 / 2.0) / gamma_half
}

/// Symmetric 3x3 component order: xx, xy, xz, yy, yz, zz.
pub const SYM6: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];

/// Metric data minus identity and its first derivatives, sampled on a
/// coordinate sphere of the asymptotic chart.
#[derive(Debug, Clone)]
pub struct ShellSample {
    pub radius: f64,
    /// (g_ij - delta_ij) per node, symmetric storage.
    pub h: Vec<[f64; 6]>,
    /// dg[k][node] = partial_k g_ij per node, symmetric storage.
    pub dg: [Vec<[f64; 6]>; 3],
}

/// Sampled asymptotic chart: an increasing family of coordinate shells.
#[derive(Debug, Clone)]
pub struct AsymptoticChart {
    pub grid: GridRef,
    pub dimension: usize,
    pub shells: Vec<ShellSample>,
}

impl AsymptoticChart {
    /// Sample a chart from closures for g_ij(x) and its gradient.
    pub fn sample(
        grid: &GridRef,
        radii: &[f64],
        g: impl Fn([f64; 3]) -> [[f64; 3]; 3],
        dg: impl Fn([f64; 3]) -> [[[f64; 3]; 3]; 3],
    ) -> AsymptoticChart {
        let mut shells = Vec::with_capacity(radii.len());
        for &rho in radii {
            let mut hv = Vec::with_capacity(grid.node_count());
            let mut dgv = [
                Vec::with_capacity(grid.node_count()),
                Vec::with_capacity(grid.node_count()),
                Vec::with_capacity(grid.node_count()),
            ];
            for i in 0..grid.n_theta {
                for j in 0..grid.n_phi {
                    let (st, ct) = (grid.sin_theta[i], grid.cos_theta[i]);
                    let (sp, cp) = (grid.phi[j].sin(), grid.phi[j].cos());
                    let x = [rho * st * cp, rho * st * sp, rho * ct];
                    let gm = g(x);
                    let mut h6 = [0.0; 6];
                    for a in 0..3 {
                        for b in a..3 {
                            h6[SYM6[a][b]] = gm[a][b] - if a == b { 1.0 } else { 0.0 };
                        }
                    }
                    hv.push(h6);
                    let dgm = dg(x);
                    for k in 0..3 {
                        let mut d6 = [0.0; 6];
                        for a in 0..3 {
                            for b in a..3 {
                                d6[SYM6[a][b]] = dgm[k][a][b];
                            }
                        }
                        dgv[k].push(d6);
                    }
                }
            }
            shells.push(ShellSample { radius: rho, h: hv, dg: dgv });
        }
        AsymptoticChart { grid: Arc::clone(grid), dimension: 3, shells }
    }

    /// Conformally flat chart g = u^(4/(n-2)) delta for n = 3.
    pub fn conformally_flat(
        grid: &GridRef,
        radii: &[f64],
        u: impl Fn([f64; 3]) -> f64 + Copy,
        grad_u: impl Fn([f64; 3]) -> [f64; 3] + Copy,
    ) -> AsymptoticChart {
        AsymptoticChart::sample(
            grid,
            radii,
            move |x| {
                let w = u(x).powi(4);
                [[w, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, w]]
            },
            move |x| {
                let uu = u(x);
                let gu = grad_u(x);
                let mut out = [[[0.0; 3]; 3]; 3];
                for k in 0..3 {
                    let dw = 4.0 * uu.powi(3) * gu[k];
                    for a in 0..3 {
                        out[k][a][a] = dw;
                    }
                }
                out
            },
        )
    }

    /// Sup-norm of g - delta per shell.
    pub fn deviation_per_shell(&self) -> Vec<f64> {
        self.shells
            .iter()
            .map(|s| {
                s.h.iter()
                    .flat_map(|h6| h6.iter())
                    .fold(0.0_f64, |a, &b| a.max(b.abs()))
            })
            .collect()
    }
}

/// Result of the ADM flux evaluation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FluxMassReport {
    pub mass: f64,
    /// (shell radius, flux value) diagnostics.
    pub per_shell: Vec<(f64, f64)>,
    /// Fitted metric decay rate p in |g - delta| ~ rho^(-p).
    pub decay_p: f64,
    pub fit_residual: f64,
}

/// Options for [`adm_flux_mass`].
#[derive(Debug, Clone, Copy)]
pub struct FluxOptions {
    /// Residual bound (relative to max(1, |m|)) for the Richardson fit.
    pub residual_tol: f64,
}

impl Default for FluxOptions {
    fn default() -> Self {
        FluxOptions { residual_tol: 1e-2 }
    }
}

/// ADM flux integral with two-term Richardson extrapolation in 1/rho.
///
/// Evaluates (1 / 4 w_{n-1}) \oint (g_ij,i - g_ii,j) nu^j dmu on every shell
/// and extrapolates the shell values to rho -> infinity.
pub fn adm_flux_mass(chart: &AsymptoticChart) -> Result<FluxMassReport> {
    adm_flux_mass_with(chart, &FluxOptions::default())
}

pub fn adm_flux_mass_with(chart: &AsymptoticChart, opt: &FluxOptions) -> Result<FluxMassReport> {
    let ns = chart.shells.len();
    if ns < 3 {
        return Err(Error::PreconditionViolated(format!(
            "need at least 3 shells, got {ns}"
        )));
    }
    let r0 = chart.shells.first().unwrap().radius;
    let r1 = chart.shells.last().unwrap().radius;
    if r1 < 4.0 * r0 {
        return Err(Error::PreconditionViolated(format!(
            "shells must span a factor of 4 in radius ({r0} .. {r1})"
        )));
    }
    let n = chart.dimension;
    let omega = unit_sphere_volume(n);

    // Decay check on |g - delta|.
    let dev = chart.deviation_per_shell();
    let mut logs = Vec::new();
    for (s, &d) in chart.shells.iter().zip(&dev) {
        if d > 1e-14 {
            logs.push((s.radius.ln(), d.ln()));
        }
    }
    let decay_p = if logs.len() >= 2 {
        let nl = logs.len() as f64;
        let mx = logs.iter().map(|(a, _)| a).sum::<f64>() / nl;
        let my = logs.iter().map(|(_, b)| b).sum::<f64>() / nl;
        let sxx: f64 = logs.iter().map(|(a, _)| (a - mx) * (a - mx)).sum();
        let sxy: f64 = logs.iter().map(|(a, b)| (a - mx) * (b - my)).sum();
        -(sxy / sxx)
    } else {
        f64::INFINITY // flat data decay faster than any power
    };
    let required = (n as f64 - 2.0) / 2.0;
    if decay_p <= required {
        return Err(Error::DecayViolation { fitted: decay_p, required });
    }

    let grid = &chart.grid;
    let mut per_shell = Vec::with_capacity(ns);
    for s in &chart.shells {
        let rho = s.radius;
        let mut total = 0.0;
        let mut node = 0;
        for i in 0..grid.n_theta {
            let w = grid.ring_weight[i];
            for j in 0..grid.n_phi {
                let (st, ct) = (grid.sin_theta[i], grid.cos_theta[i]);
                let (sp, cp) = (grid.phi[j].sin(), grid.phi[j].cos());
                let nu = [st * cp, st * sp, ct];
                let mut integrand = 0.0;
                for jj in 0..3 {
                    let mut div = 0.0;
                    for ii in 0..3 {
                        div += s.dg[ii][node][SYM6[ii][jj]];
                    }
                    let trace_d = s.dg[jj][node][0] + s.dg[jj][node][3] + s.dg[jj][node][5];
                    integrand += (div - trace_d) * nu[jj];
                }
                total += integrand * w;
                node += 1;
            }
        }
        // dmu = rho^(n-1) dOmega.
        per_shell.push((rho, total * rho.powi(n as i32 - 1) / (4.0 * omega)));
    }

    // Two-term Richardson in 1/rho: m(rho) ~ m + c1/rho + c2/rho^2.
    let ones = vec![1.0; ns];
    let inv: Vec<f64> = per_shell.iter().map(|(r, _)| 1.0 / r).collect();
    let inv2: Vec<f64> = inv.iter().map(|x| x * x).collect();
    let rhs: Vec<f64> = per_shell.iter().map(|(_, m)| *m).collect();
    let coef = least_squares(&[ones, inv.clone(), inv2.clone()], &rhs)?;
    let mass = coef[0];
    let mut res2 = 0.0;
    for (k, (_, m)) in per_shell.iter().enumerate() {
        let fit = coef[0] + coef[1] * inv[k] + coef[2] * inv2[k];
        res2 += (m - fit) * (m - fit);
    }
    let fit_residual = (res2 / ns as f64).sqrt();
    if fit_residual > opt.residual_tol * mass.abs().max(1.0) {
        return Err(Error::NonConvergent(format!(
            "flux extrapolation residual {fit_residual:.3e}"
        )));
    }
    Ok(FluxMassReport { mass, per_shell, decay_p, fit_residual })
}

/// The expansion mass (n-1) A from the conformal-factor coefficient.
pub fn expansion_mass(a: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::PreconditionViolated(format!("dimension n = {n} < 3")));
    }
    Ok((n as f64 - 1.0) * a)
}

/// Least-squares fit of the conformal-factor tail u = 1 + A rho^(2-n) + O(rho^(1-n)).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExpansionFit {
    pub a: f64,
    pub residual: f64,
    pub shells_used: Vec<f64>,
}

/// Options for the expansion fit.
#[derive(Debug, Clone, Copy)]
pub struct ExpansionFitOptions {
    pub residual_tol: f64,
}

impl Default for ExpansionFitOptions {
    fn default() -> Self {
        ExpansionFitOptions { residual_tol: 1e-3 }
    }
}

/// Fit A from shell means of (u - 1) against rho^(2-n) with a rho^(1-n)
/// correction column.
pub fn fit_expansion_coefficient(shells: &[(f64, Field)], n: usize) -> Result<ExpansionFit> {
    let means: Vec<(f64, f64)> = shells
        .iter()
        .map(|(r, f)| (*r, f.mean_round()))
        .collect();
    fit_expansion_from_means(&means, n)
}

pub fn fit_expansion_from_means(means: &[(f64, f64)], n: usize) -> Result<ExpansionFit> {
    fit_expansion_from_means_with(means, n, &ExpansionFitOptions::default())
}

pub fn fit_expansion_from_means_with(
    means: &[(f64, f64)],
    n: usize,
    opt: &ExpansionFitOptions,
) -> Result<ExpansionFit> {
    if means.len() < 2 {
        return Err(Error::PreconditionViolated("need at least 2 shells to fit".into()));
    }
    let outer = means.last().unwrap();
    if (outer.1 - 1.0).abs() > 0.2 {
        return Err(Error::PreconditionViolated(format!(
            "outermost shell mean {:.4} is not near 1",
            outer.1
        )));
    }
    let p2: Vec<f64> = means.iter().map(|(r, _)| r.powi(2 - n as i32)).collect();
    let p1: Vec<f64> = means.iter().map(|(r, _)| r.powi(1 - n as i32)).collect();
    let rhs: Vec<f64> = means.iter().map(|(_, u)| u - 1.0).collect();
    let coef = least_squares(&[p2.clone(), p1.clone()], &rhs)?;
    let mut res2 = 0.0;
    for k in 0..means.len() {
        let fit = coef[0] * p2[k] + coef[1] * p1[k];
        res2 += (rhs[k] - fit) * (rhs[k] - fit);
    }
    let residual = (res2 / means.len() as f64).sqrt();
    let scale = rhs.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1e-30);
    if residual > opt.residual_tol * scale.max(1e-12) {
        return Err(Error::NonConvergent(format!(
            "expansion fit residual {residual:.3e} vs scale {scale:.3e}"
        )));
    }
    Ok(ExpansionFit {
        a: coef[0],
        residual,
        shells_used: means.iter().map(|(r, _)| *r).collect(),
    })
}

/// Fit shell means against w_inf + A rho^(2-n) + B rho^(1-n), returning the
/// limit value and the leading coefficient. Used for conformal factors whose
/// tail value is not known a priori.
pub fn fit_tail_with_limit(means: &[(f64, f64)], n: usize) -> Result<(f64, f64, f64)> {
    if means.len() < 3 {
        return Err(Error::PreconditionViolated("need at least 3 shells to fit tail".into()));
    }
    let ones = vec![1.0; means.len()];
    let p2: Vec<f64> = means.iter().map(|(r, _)| r.powi(2 - n as i32)).collect();
    let p1: Vec<f64> = means.iter().map(|(r, _)| r.powi(1 - n as i32)).collect();
    let rhs: Vec<f64> = means.iter().map(|(_, u)| *u).collect();
    let coef = least_squares(&[ones, p2.clone(), p1.clone()], &rhs)?;
    let mut res2 = 0.0;
    for k in 0..means.len() {
        let fit = coef[0] + coef[1] * p2[k] + coef[2] * p1[k];
        res2 += (rhs[k] - fit) * (rhs[k] - fit);
    }
    Ok((coef[0], coef[1], (res2 / means.len() as f64).sqrt()))
}

/// Hawking mass from a surface's area and its integrated squared mean
/// curvature: sqrt(area/16pi) (16pi - \oint H^2) / 16pi.
pub fn hawking_mass(area: f64, integral_h2: f64) -> Result<f64> {
    if !(area > 0.0) {
        return Err(Error::NonPositiveArea(area));
    }
    let sixteen_pi = 16.0 * std::f64::consts::PI;
    Ok(area.sqrt() * (sixteen_pi - integral_h2) / sixteen_pi.powf(1.5))
}

/// Hawking mass of slice k of a foliated metric.
pub fn hawking_mass_of_slice(fm: &FoliatedMetric, k: usize) -> Result<f64> {
    let h = slice_mean_curvature(fm, k)?;
    let area = fm.surfaces[k].area();
    let h2 = fm.surfaces[k].integrate(&h.mul(&h));
    hawking_mass(area, h2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid;
    use crate::geometry::SurfaceMetric;

    fn log_radii(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn euclidean_chart_has_zero_mass() {
        let g = grid(16, 16);
        let radii = log_radii(50.0, 400.0, 6);
        let chart = AsymptoticChart::conformally_flat(&g, &radii, |_| 1.0, |_| [0.0; 3]);
        let rep = adm_flux_mass(&chart).unwrap();
        assert!(rep.mass.abs() < 1e-12, "mass {}", rep.mass);
    }

    #[test]
    fn isotropic_schwarzschild_mass() {
        let g = grid(16, 16);
        let radii = log_radii(50.0, 400.0, 8);
        let m = 1.0;
        let u = move |x: [f64; 3]| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            1.0 + 0.5 * m / r
        };
        let gu = move |x: [f64; 3]| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            let r = r2.sqrt();
            let d = -0.5 * m / (r2 * r);
            [d * x[0], d * x[1], d * x[2]]
        };
        let chart = AsymptoticChart::conformally_flat(&g, &radii, u, gu);
        let rep = adm_flux_mass(&chart).unwrap();
        assert!((rep.mass - 1.0).abs() < 1e-3, "mass {}", rep.mass);
        assert!((rep.decay_p - 1.0).abs() < 0.1, "decay {}", rep.decay_p);
    }

    #[test]
    fn quarter_coefficient_chart() {
        let g = grid(16, 16);
        let radii = log_radii(50.0, 400.0, 8);
        let u = |x: [f64; 3]| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            1.0 + 0.25 / r
        };
        let gu = |x: [f64; 3]| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            let r = r2.sqrt();
            let d = -0.25 / (r2 * r);
            [d * x[0], d * x[1], d * x[2]]
        };
        let chart = AsymptoticChart::conformally_flat(&g, &radii, u, gu);
        let rep = adm_flux_mass(&chart).unwrap();
        // m = (n-1) A with A = 0.25.
        assert!((rep.mass - 0.5).abs() < 1e-3, "mass {}", rep.mass);
    }

    #[test]
    fn flux_mass_rotation_invariance() {
        let g = grid(16, 16);
        let radii = log_radii(50.0, 400.0, 6);
        // Anisotropic decaying perturbation.
        let gfun = |x: [f64; 3]| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            let r = r2.sqrt();
            let u4 = (1.0 + 0.4 / r).powi(4);
            let b = 0.3 * x[2] / (r2 * r); // ~ cos(theta)/r^2
            [[u4 + b, 0.0, 0.0], [0.0, u4 + b, 0.0], [0.0, 0.0, u4 + b]]
        };
        let dgfun = |x: [f64; 3]| {
            let h = 1e-5;
            let mut out = [[[0.0; 3]; 3]; 3];
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let gp = gfun(xp);
                let gm = gfun(xm);
                for a in 0..3 {
                    for b in 0..3 {
                        out[k][a][b] = (gp[a][b] - gm[a][b]) / (2.0 * h);
                    }
                }
            }
            out
        };
        let chart = AsymptoticChart::sample(&g, &radii, gfun, dgfun);
        let rep = adm_flux_mass(&chart).unwrap();

        // Rotate the chart by 90 degrees about y: x' = Q x, g'(x) = Q^T g(Qx) Q.
        let q = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        let rot = move |x: [f64; 3]| {
            let mut y = [0.0; 3];
            for a in 0..3 {
                for b in 0..3 {
                    y[a] += q[a][b] * x[b];
                }
            }
            y
        };
        let gfun_rot = move |x: [f64; 3]| {
            let gm = gfun(rot(x));
            let mut out = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    let mut s = 0.0;
                    for c in 0..3 {
                        for d in 0..3 {
                            s += q[c][a] * gm[c][d] * q[d][b];
                        }
                    }
                    out[a][b] = s;
                }
            }
            out
        };
        let dgfun_rot = move |x: [f64; 3]| {
            let h = 1e-5;
            let mut out = [[[0.0; 3]; 3]; 3];
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let gp = gfun_rot(xp);
                let gm = gfun_rot(xm);
                for a in 0..3 {
                    for b in 0..3 {
                        out[k][a][b] = (gp[a][b] - gm[a][b]) / (2.0 * h);
                    }
                }
            }
            out
        };
        let chart_rot = AsymptoticChart::sample(&g, &radii, gfun_rot, dgfun_rot);
        let rep_rot = adm_flux_mass(&chart_rot).unwrap();
        assert!(
            (rep.mass - rep_rot.mass).abs() < 1e-6,
            "{} vs {}",
            rep.mass,
            rep_rot.mass
        );
    }

    #[test]
    fn expansion_mass_formula() {
        assert_eq!(expansion_mass(0.0, 3).unwrap(), 0.0);
        assert!((expansion_mass(0.5, 3).unwrap() - 1.0).abs() < 1e-15);
        assert!((expansion_mass(-0.2, 4).unwrap() + 0.6).abs() < 1e-15);
        assert!(expansion_mass(1.0, 2).is_err());
    }

    #[test]
    fn expansion_fit_recovers_coefficients() {
        let radii = log_radii(50.0, 400.0, 8);
        let exact: Vec<(f64, f64)> = radii.iter().map(|&r| (r, 1.0 + 0.5 / r)).collect();
        let fit = fit_expansion_from_means(&exact, 3).unwrap();
        assert!((fit.a - 0.5).abs() < 1e-6, "A = {}", fit.a);

        let with_tail: Vec<(f64, f64)> =
            radii.iter().map(|&r| (r, 1.0 + 0.5 / r - 0.3 / (r * r))).collect();
        let fit2 = fit_expansion_from_means(&with_tail, 3).unwrap();
        assert!((fit2.a - 0.5).abs() < 1e-4, "A = {}", fit2.a);

        let flat: Vec<(f64, f64)> = radii.iter().map(|&r| (r, 1.0)).collect();
        let fit3 = fit_expansion_from_means(&flat, 3).unwrap();
        assert!(fit3.a.abs() < 1e-12);
    }

    #[test]
    fn hawking_mass_values() {
        let pi = std::f64::consts::PI;
        // Round sphere of radius r in flat space: area 4 pi r^2, H = 2/r.
        for &r in &[1.0, 2.5] {
            let area = 4.0 * pi * r * r;
            let h2 = (2.0 / r) * (2.0 / r) * area;
            assert!(hawking_mass(area, h2).unwrap().abs() < 1e-14);
        }
        // Minimal surface: integral of H^2 vanishes.
        let area = 12.0;
        let mh = hawking_mass(area, 0.0).unwrap();
        assert!((mh - (area / (16.0 * pi)).sqrt()).abs() < 1e-14);
        assert!(hawking_mass(-1.0, 0.0).is_err());
    }

    #[test]
    fn hawking_mass_r_independent_for_schwarzschild() {
        let g = grid(8, 8);
        let m = 0.4;
        let times: Vec<f64> = (0..21).map(|k| 1.5 + 0.25 * k as f64).collect();
        let surfaces: Vec<SurfaceMetric> =
            times.iter().map(|&r| SurfaceMetric::round(&g, r)).collect();
        let lapse: Vec<Vec<f64>> = times
            .iter()
            .map(|&r| vec![(1.0 - 2.0 * m / r).powf(-0.5); g.n_theta])
            .collect();
        let fm = FoliatedMetric::new(&g, times, surfaces, Some(lapse)).unwrap();
        for k in 0..fm.slice_count() {
            let mh = hawking_mass_of_slice(&fm, k).unwrap();
            assert!((mh - m).abs() < 1e-10, "slice {k}: {mh}");
        }
    }
}
