//! Generators for the analytic metric families used by the examples, the
//! CLI presets, and the test oracles.

use crate::error::Result;
use crate::field::Field;
use crate::geometry::{FoliatedMetric, SurfaceMetric};
use crate::grid::GridRef;

/// Flat exterior collar r in [r0, r1], Gaussian form, uniform slices.
pub fn flat_collar(grid: &GridRef, r0: f64, r1: f64, slices: usize) -> FoliatedMetric {
    let times: Vec<f64> = (0..slices)
        .map(|k| (r1 - r0) * k as f64 / (slices - 1) as f64)
        .collect();
    let surfaces = times.iter().map(|&t| SurfaceMetric::round(grid, r0 + t)).collect();
    FoliatedMetric::unit_lapse(grid, times, surfaces).expect("increasing times")
}

/// Area radius along the Schwarzschild radial geodesic: dr/dtau = sqrt(1 - 2m/r).
/// Fixed-step RK4, sub-stepped for accuracy; requires r0 > 2m.
pub fn schwarzschild_area_radius(m: f64, r0: f64, tau: f64, substeps_per_unit: usize) -> f64 {
    assert!(r0 > 2.0 * m, "collar must start outside the horizon");
    let f = |r: f64| (1.0 - 2.0 * m / r).max(0.0).sqrt();
    let n = ((tau.abs() * substeps_per_unit as f64).ceil() as usize).max(1);
    let h = tau / n as f64;
    let mut r = r0;
    for _ in 0..n {
        let k1 = f(r);
        let k2 = f(r + 0.5 * h * k1);
        let k3 = f(r + 0.5 * h * k2);
        let k4 = f(r + h * k3);
        r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    r
}

/// Schwarzschild exterior collar in Gaussian (proper-distance) form starting
/// at area radius r0. Slices are uniform in proper distance; `depth` is the
/// proper-distance extent.
pub fn schwarzschild_collar(
    grid: &GridRef,
    m: f64,
    r0: f64,
    depth: f64,
    slices: usize,
) -> FoliatedMetric {
    let times: Vec<f64> = (0..slices)
        .map(|k| depth * k as f64 / (slices - 1) as f64)
        .collect();
    let surfaces = times
        .iter()
        .map(|&t| SurfaceMetric::round(grid, schwarzschild_area_radius(m, r0, t, 4096)))
        .collect();
    FoliatedMetric::unit_lapse(grid, times, surfaces).expect("increasing times")
}

/// Boundary mean curvature of the round sphere of radius r in flat space.
pub fn flat_boundary_h(grid: &GridRef, r: f64) -> Field {
    Field::constant(grid, 2.0 / r, crate::field::Unit::INV_LENGTH)
}

/// Boundary mean curvature of the Schwarzschild exterior at area radius r.
pub fn schwarzschild_boundary_h(grid: &GridRef, m: f64, r: f64) -> Field {
    Field::constant(
        grid,
        2.0 / r * (1.0 - 2.0 * m / r).sqrt(),
        crate::field::Unit::INV_LENGTH,
    )
}

/// Slice times that are uniform in log(r/r0); used for exterior stacks that
/// must reach large radius with few slices.
pub fn log_times(r0: f64, r1: f64, slices: usize) -> Vec<f64> {
    (0..slices)
        .map(|k| r0 * (r1 / r0).powf(k as f64 / (slices - 1) as f64) - r0)
        .collect()
}

/// Radial shells spaced uniformly in log radius.
pub fn log_radii(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64))
        .collect()
}

/// Proper radial distance from the horizon in the Schwarzschild exterior:
/// tau(r) = sqrt(r(r-2m)) + 2m ln((sqrt r + sqrt(r-2m)) / sqrt(2m)).
/// Exact; valid for r >= 2m including the horizon itself.
pub fn schwarzschild_proper_distance(m: f64, r: f64) -> f64 {
    if m == 0.0 {
        return r;
    }
    let a = (r * (r - 2.0 * m)).max(0.0).sqrt();
    a + 2.0 * m * ((r.sqrt() + (r - 2.0 * m).max(0.0).sqrt()) / (2.0 * m).sqrt()).ln()
}

/// Schwarzschild collar whose slices follow a prescribed area-radius list;
/// proper distances come from the closed form, so the horizon is admitted.
pub fn schwarzschild_collar_at_radii(
    grid: &GridRef,
    m: f64,
    radii: &[f64],
) -> Result<FoliatedMetric> {
    let tau0 = schwarzschild_proper_distance(m, radii[0]);
    let times: Vec<f64> = radii
        .iter()
        .map(|&r| schwarzschild_proper_distance(m, r) - tau0)
        .collect();
    let surfaces = radii.iter().map(|&r| SurfaceMetric::round(grid, r)).collect();
    FoliatedMetric::unit_lapse(grid, times, surfaces)
}

/// Radial slicing with a uniformly-spaced collar near the boundary followed
/// by a log-spaced tail to the far field.
#[derive(Debug, Clone, Copy)]
pub struct StackSpec {
    pub collar_depth: f64,
    pub collar_slices: usize,
    pub rho_max: f64,
    pub tail_slices: usize,
}

impl Default for StackSpec {
    fn default() -> Self {
        StackSpec { collar_depth: 0.75, collar_slices: 61, rho_max: 400.0, tail_slices: 140 }
    }
}

/// Composite radii: uniform collar then log tail.
pub fn composite_radii(r0: f64, spec: &StackSpec) -> Vec<f64> {
    let mut radii: Vec<f64> = (0..spec.collar_slices)
        .map(|k| r0 + spec.collar_depth * k as f64 / (spec.collar_slices - 1) as f64)
        .collect();
    let r1 = r0 + spec.collar_depth;
    let tail = log_radii(r1, spec.rho_max, spec.tail_slices + 1);
    radii.extend(tail.into_iter().skip(1));
    radii
}

/// Flat exterior manifold on a composite collar + tail slicing.
pub fn flat_exterior_manifold_with(
    grid: &GridRef,
    r0: f64,
    spec: &StackSpec,
) -> crate::conformal::ExteriorManifold {
    let radii = composite_radii(r0, spec);
    let times: Vec<f64> = radii.iter().map(|&r| r - r0).collect();
    let surfaces = radii.iter().map(|&r| SurfaceMetric::round(grid, r)).collect();
    let stack = FoliatedMetric::unit_lapse(grid, times, surfaces).expect("increasing radii");
    crate::conformal::ExteriorManifold::scalar_flat(stack, 0.0).expect("layout")
}

/// Schwarzschild exterior manifold on a composite collar + tail slicing.
pub fn schwarzschild_exterior_manifold_with(
    grid: &GridRef,
    m: f64,
    r0: f64,
    spec: &StackSpec,
) -> crate::conformal::ExteriorManifold {
    let radii = composite_radii(r0, spec);
    let stack = schwarzschild_collar_at_radii(grid, m, &radii).expect("increasing radii");
    crate::conformal::ExteriorManifold::scalar_flat(stack, m).expect("layout")
}

/// Graft extension on a composite slicing.
pub fn graft_exterior_manifold_with(
    grid: &GridRef,
    h_boundary: &Field,
    r0: f64,
    spec: &StackSpec,
) -> Result<crate::conformal::ExteriorManifold> {
    let radii = composite_radii(r0, spec);
    let times: Vec<f64> = radii.iter().map(|&r| r - r0).collect();
    let bg = crate::quasispherical::BackgroundSpec::FlatCone {
        grid: std::sync::Arc::clone(grid),
        r0,
        span: (0.0, spec.rho_max - r0),
    };
    let u0 = h_boundary.map(|h| 2.0 / r0 / h);
    let mut p = crate::quasispherical::QSProblem::new(bg.clone(), u0, spec.rho_max - r0);
    p.outputs = times;
    p.options.rtol = 1e-9;
    p.options.allow_partial = false;
    let sol = crate::quasispherical::solve(&p)?;
    let fm = sol.to_foliated(&bg)?;
    let mass = crate::mass::hawking_mass_of_slice(&fm, fm.slice_count() - 1)?;
    crate::conformal::ExteriorManifold::scalar_flat(fm, mass)
}

/// Flat exterior manifold: Gaussian stack r in [r0, rho_max], slices
/// log-spaced in radius.
pub fn flat_exterior_manifold(
    grid: &GridRef,
    r0: f64,
    rho_max: f64,
    slices: usize,
) -> crate::conformal::ExteriorManifold {
    let radii = log_radii(r0, rho_max, slices);
    let times: Vec<f64> = radii.iter().map(|&r| r - r0).collect();
    let surfaces = radii.iter().map(|&r| SurfaceMetric::round(grid, r)).collect();
    let stack = FoliatedMetric::unit_lapse(grid, times, surfaces).expect("increasing radii");
    crate::conformal::ExteriorManifold::scalar_flat(stack, 0.0).expect("layout")
}

/// Schwarzschild exterior manifold in area-radius Gaussian form; slices
/// log-spaced in area radius out to rho_max.
pub fn schwarzschild_exterior_manifold(
    grid: &GridRef,
    m: f64,
    r0: f64,
    rho_max: f64,
    slices: usize,
) -> crate::conformal::ExteriorManifold {
    let radii = log_radii(r0, rho_max, slices);
    let stack = schwarzschild_collar_at_radii(grid, m, &radii).expect("increasing radii");
    crate::conformal::ExteriorManifold::scalar_flat(stack, m).expect("layout")
}

/// Conformally flat manifold g = phi^4 delta with a compactly supported
/// positive scalar-curvature bump.
///
/// phi = 1 + amplitude * p(rho) where p is the Newtonian potential of the
/// C^2 bump density beta(rho) = (1 - ((rho-center)/width)^2)^3 on
/// [center-width, center+width]; then R = 8 amplitude beta / phi^5 >= 0.
/// The stack is the isotropic coordinate foliation: surfaces phi^4 rho^2 x
/// round, lapse phi^2.
pub fn conformal_bump_manifold(
    grid: &GridRef,
    amplitude: f64,
    center: f64,
    width: f64,
    rho_max: f64,
    slices: usize,
) -> crate::conformal::ExteriorManifold {
    let rho0 = 1.0;
    assert!(center - width > rho0, "bump must sit inside the exterior");
    let beta = |rho: f64| -> f64 {
        let s = (rho - center) / width;
        if s.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - s * s).powi(3)
        }
    };
    // p(rho) = int_rho^inf sigma^-2 M(sigma) dsigma, M(sigma) = int_0^sigma s^2 beta.
    // Beyond the support p = Q/rho with Q = M(inf).
    let moment = |upper: f64| -> f64 {
        let lo = (center - width).min(upper);
        let hi = (center + width).min(upper);
        if hi <= lo {
            return 0.0;
        }
        let (x, w) = crate::linalg::gauss_legendre_on(lo, hi, 48);
        x.iter().zip(&w).map(|(&s, &ww)| ww * s * s * beta(s)).sum()
    };
    let q_total = moment(f64::INFINITY);
    let p_of = |rho: f64| -> f64 {
        if rho >= center + width {
            return q_total / rho;
        }
        // Tail beyond the support plus the partial integral up to there.
        let hi = center + width;
        let (x, w) = crate::linalg::gauss_legendre_on(rho, hi, 48);
        let inner: f64 = x
            .iter()
            .zip(&w)
            .map(|(&s, &ww)| ww * moment(s) / (s * s))
            .sum();
        inner + q_total / hi
    };
    let radii = log_radii(rho0, rho_max, slices);
    let times: Vec<f64> = radii.iter().map(|&r| r - rho0).collect();
    let mut surfaces = Vec::with_capacity(slices);
    let mut lapse = Vec::with_capacity(slices);
    let mut scalar = Vec::with_capacity(slices);
    for &rho in &radii {
        let phi = 1.0 + amplitude * p_of(rho);
        surfaces.push(SurfaceMetric::round(grid, phi * phi * rho));
        lapse.push(vec![phi * phi; grid.n_theta]);
        scalar.push(vec![8.0 * amplitude * beta(rho) / phi.powi(5); grid.n_theta]);
    }
    let stack = FoliatedMetric::new(grid, times, surfaces, Some(lapse)).expect("layout");
    // Conformally flat and scalar flat outside a compact set: the flux mass
    // is (n-1) A with A = amplitude * Q.
    let mass = 2.0 * amplitude * q_total;
    crate::conformal::ExteriorManifold::new(stack, scalar, mass).expect("layout")
}

/// Scalar-flat anisotropic extension grown from prescribed boundary mean
/// curvature over the flat cone (boundary metric: round sphere of radius
/// r0). The boundary mean curvature profile must be positive and bounded by
/// the flat value 2/r0 wherever the class requires it.
pub fn graft_exterior_manifold(
    grid: &GridRef,
    h_boundary: &Field,
    r0: f64,
    rho_max: f64,
    slices: usize,
) -> Result<crate::conformal::ExteriorManifold> {
    let radii = log_radii(r0, rho_max, slices);
    let times: Vec<f64> = radii.iter().map(|&r| r - r0).collect();
    let bg = crate::quasispherical::BackgroundSpec::FlatCone {
        grid: std::sync::Arc::clone(grid),
        r0,
        span: (0.0, rho_max - r0),
    };
    let u0 = h_boundary.map(|h| 2.0 / r0 / h);
    let mut p = crate::quasispherical::QSProblem::new(bg.clone(), u0, rho_max - r0);
    p.outputs = times;
    p.options.rtol = 1e-9;
    p.options.allow_partial = false;
    let sol = crate::quasispherical::solve(&p)?;
    let fm = sol.to_foliated(&bg)?;
    // Shi-Tam style mass: the Hawking masses of the round slices converge
    // to the ADM mass; take the outermost value.
    let mass = crate::mass::hawking_mass_of_slice(&fm, fm.slice_count() - 1)?;
    crate::conformal::ExteriorManifold::scalar_flat(fm, mass)
}
