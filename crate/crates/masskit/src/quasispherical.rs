//! Prescribed-scalar-curvature lapse flow and collar ("bridge") metrics.
//!
//! Over a background g = g_t + dt^2 with positive slice mean curvature H,
//! the lapse u of the deformed metric g_t + u^2 dt^2 prescribes the ambient
//! scalar curvature Rt through the parabolic equation
//!
//!   H du/dt = u^2 Lap_{g_t} u + (u - u^3) R(g_t)/2 - u R(g)/2 + u^3 Rt/2.
//!
//! The solver marches this with a semi-implicit scheme (Laplacian implicit
//! with frozen coefficients, cubic reaction explicit) wrapped in a
//! three-level Richardson ladder with adaptive macro steps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Field, Unit, Values};
use crate::geometry::{
    ambient_scalar_curvature, gauss_scalar_curvature, slice_mean_curvature, FoliatedMetric,
    SliceLaplacian, SurfaceMetric,
};
use crate::grid::GridRef;
use crate::linalg::{bicgstab, fd_weights};

/// Implemented spatial dimension of the ambient manifolds.
pub const DIM: usize = 3;

/// Interpolation weights over a window of slice times.
pub(crate) fn interp_weights(times: &[f64], t: f64, width: usize) -> (usize, Vec<f64>) {
    let n = times.len();
    let w = width.min(n);
    let k = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    let mut start = k.saturating_sub(w / 2);
    if start + w > n {
        start = n - w;
    }
    let wts = fd_weights(t, &times[start..start + w], 0);
    (start, wts[0].clone())
}

/// Background data the flow needs along the foliation.
#[derive(Debug, Clone)]
pub enum BackgroundSpec {
    /// Flat-space cone foliation: g_t = (r0 + t)^2 x round, H = 2/(r0+t),
    /// R(g_t) = 2/(r0+t)^2, R(g) = 0 (dimension 3).
    FlatCone { grid: GridRef, r0: f64, span: (f64, f64) },
    /// Slice-sampled background from a unit-lapse foliated metric.
    Sampled(SampledBackground),
}

/// Pre-differentiated unit-lapse background.
#[derive(Debug, Clone)]
pub struct SampledBackground {
    pub fm: FoliatedMetric,
    h: Vec<Vec<f64>>,
    r_slice: Vec<Vec<f64>>,
    r_ambient: Vec<Vec<f64>>,
}

impl SampledBackground {
    /// Builds the background caches. The foliated metric's own lapse is
    /// ignored: the flow runs over the unit-lapse metric with the same
    /// surface family.
    pub fn new(fm: &FoliatedMetric) -> Result<SampledBackground> {
        if fm.slice_count() < 3 {
            return Err(Error::InsufficientSlices { needed: 3, got: fm.slice_count() });
        }
        let unit = FoliatedMetric::unit_lapse(&fm.grid, fm.times.clone(), fm.surfaces.clone())?;
        let mut h = Vec::with_capacity(unit.slice_count());
        let mut r_slice = Vec::with_capacity(unit.slice_count());
        for k in 0..unit.slice_count() {
            h.push(match slice_mean_curvature(&unit, k)?.values {
                Values::Sym(v) | Values::Full(v) => v,
            });
            r_slice.push(match gauss_scalar_curvature(&unit.surfaces[k])?.values {
                Values::Sym(v) | Values::Full(v) => v,
            });
        }
        let r_ambient = ambient_scalar_curvature(&unit)?
            .into_iter()
            .map(|f| match f.values {
                Values::Sym(v) | Values::Full(v) => v,
            })
            .collect();
        Ok(SampledBackground { fm: unit, h, r_slice, r_ambient })
    }
}

pub(crate) struct BackgroundFields {
    pub h: Vec<f64>,
    pub r_slice: Vec<f64>,
    pub r_ambient: Vec<f64>,
}

impl BackgroundSpec {
    pub fn grid(&self) -> &GridRef {
        match self {
            BackgroundSpec::FlatCone { grid, .. } => grid,
            BackgroundSpec::Sampled(sb) => &sb.fm.grid,
        }
    }

    pub fn symmetric(&self) -> bool {
        match self {
            BackgroundSpec::FlatCone { .. } => true,
            BackgroundSpec::Sampled(sb) => sb.fm.symmetric,
        }
    }

    pub fn span(&self) -> (f64, f64) {
        match self {
            BackgroundSpec::FlatCone { span, .. } => *span,
            BackgroundSpec::Sampled(sb) => {
                (*sb.fm.times.first().unwrap(), *sb.fm.times.last().unwrap())
            }
        }
    }

    pub fn surface_at(&self, t: f64) -> SurfaceMetric {
        match self {
            BackgroundSpec::FlatCone { grid, r0, .. } => SurfaceMetric::round(grid, r0 + t),
            BackgroundSpec::Sampled(sb) => {
                let (start, ws) = interp_weights(&sb.fm.times, t, 4);
                let n = sb.fm.surfaces[0].len();
                let mut g11 = vec![0.0; n];
                let mut g12 = vec![0.0; n];
                let mut g22 = vec![0.0; n];
                for (off, &w) in ws.iter().enumerate() {
                    let s = &sb.fm.surfaces[start + off];
                    for q in 0..n {
                        g11[q] += w * s.g11[q];
                        g12[q] += w * s.g12[q];
                        g22[q] += w * s.g22[q];
                    }
                }
                if sb.fm.symmetric {
                    SurfaceMetric::new_sym(&sb.fm.grid, g11, g22)
                } else {
                    SurfaceMetric::new_full(&sb.fm.grid, g11, g12, g22)
                }
            }
        }
    }

    pub(crate) fn fields_at(&self, t: f64) -> BackgroundFields {
        match self {
            BackgroundSpec::FlatCone { grid, r0, .. } => {
                let r = r0 + t;
                BackgroundFields {
                    h: vec![2.0 / r; grid.n_theta],
                    r_slice: vec![2.0 / (r * r); grid.n_theta],
                    r_ambient: vec![0.0; grid.n_theta],
                }
            }
            BackgroundSpec::Sampled(sb) => {
                let (start, ws) = interp_weights(&sb.fm.times, t, 4);
                let n = sb.h[0].len();
                let mut h = vec![0.0; n];
                let mut rs = vec![0.0; n];
                let mut ra = vec![0.0; n];
                for (off, &w) in ws.iter().enumerate() {
                    for q in 0..n {
                        h[q] += w * sb.h[start + off][q];
                        rs[q] += w * sb.r_slice[start + off][q];
                        ra[q] += w * sb.r_ambient[start + off][q];
                    }
                }
                BackgroundFields { h, r_slice: rs, r_ambient: ra }
            }
        }
    }

    /// Natural output times within [a, b].
    pub fn output_times(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            BackgroundSpec::FlatCone { .. } => {
                let n = 32;
                (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
            }
            BackgroundSpec::Sampled(sb) => {
                let mut out: Vec<f64> = sb
                    .fm
                    .times
                    .iter()
                    .cloned()
                    .filter(|&t| t > a + 1e-14 && t < b - 1e-14)
                    .collect();
                out.insert(0, a);
                out.push(b);
                out
            }
        }
    }
}

/// The prescribed scalar curvature along the flow.
#[derive(Debug, Clone)]
pub enum TargetScalar {
    Zero,
    /// Per-time samples, interpolated in t.
    Sampled { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl TargetScalar {
    fn at(&self, t: f64, n: usize) -> Vec<f64> {
        match self {
            TargetScalar::Zero => vec![0.0; n],
            TargetScalar::Sampled { times, values } => {
                let (start, ws) = interp_weights(times, t, 4);
                let mut out = vec![0.0; n];
                for (off, &w) in ws.iter().enumerate() {
                    for q in 0..n {
                        out[q] += w * values[start + off][q];
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QSOptions {
    pub rtol: f64,
    pub atol: f64,
    pub u_min: f64,
    pub u_cap: f64,
    pub max_steps: usize,
    pub bicg_tol: f64,
    pub bicg_max_iter: usize,
    /// Keep the partial trajectory when the lapse leaves its range or the
    /// step underflows (short-time existence).
    pub allow_partial: bool,
}

impl Default for QSOptions {
    fn default() -> Self {
        QSOptions {
            rtol: 1e-8,
            atol: 1e-12,
            u_min: 1e-4,
            u_cap: 10.0,
            max_steps: 400_000,
            bicg_tol: 1e-13,
            bicg_max_iter: 2000,
            allow_partial: true,
        }
    }
}

/// Initial-value problem for the lapse flow.
#[derive(Debug, Clone)]
pub struct QSProblem {
    pub background: BackgroundSpec,
    pub u0: Field,
    pub target_scalar: TargetScalar,
    /// Integrate from the background span start to this time.
    pub t_end: f64,
    /// Times at which the lapse is recorded; defaults to the background's
    /// slice times if empty.
    pub outputs: Vec<f64>,
    pub options: QSOptions,
}

impl QSProblem {
    pub fn new(background: BackgroundSpec, u0: Field, t_end: f64) -> QSProblem {
        QSProblem {
            background,
            u0,
            target_scalar: TargetScalar::Zero,
            t_end,
            outputs: Vec::new(),
            options: QSOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    LapseRange,
    StepUnderflow,
}

/// Lapse trajectory produced by [`solve`].
#[derive(Debug, Clone)]
pub struct QSSolution {
    pub grid: GridRef,
    pub symmetric: bool,
    pub times: Vec<f64>,
    pub lapse: Vec<Vec<f64>>,
    pub reached_t: f64,
    pub stopped: Option<StopReason>,
    /// Accepted macro step sizes.
    pub step_log: Vec<f64>,
}

impl QSSolution {
    pub fn lapse_field(&self, k: usize) -> Field {
        if self.symmetric {
            Field::from_sym(&self.grid, self.lapse[k].clone(), Unit::NONE)
        } else {
            Field::from_full(&self.grid, self.lapse[k].clone(), Unit::NONE)
        }
    }

    pub fn final_lapse(&self) -> Field {
        self.lapse_field(self.lapse.len() - 1)
    }

    /// Reassemble the quasi-spherical metric g_t + u^2 dt^2 on the recorded
    /// slices.
    pub fn to_foliated(&self, background: &BackgroundSpec) -> Result<FoliatedMetric> {
        let surfaces: Vec<SurfaceMetric> =
            self.times.iter().map(|&t| background.surface_at(t)).collect();
        FoliatedMetric::new(&self.grid, self.times.clone(), surfaces, Some(self.lapse.clone()))
    }

    pub fn max_over_flow(&self) -> f64 {
        self.lapse
            .iter()
            .flat_map(|v| v.iter())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }
}

fn expand_if_needed(grid: &GridRef, sym_target: bool, v: Vec<f64>) -> Vec<f64> {
    if sym_target || v.len() == grid.node_count() {
        v
    } else {
        let mut out = vec![0.0; grid.node_count()];
        for i in 0..grid.n_theta {
            for j in 0..grid.n_phi {
                out[grid.idx(i, j)] = v[i];
            }
        }
        out
    }
}

/// Integrate the lapse flow.
pub fn solve(p: &QSProblem) -> Result<QSSolution> {
    let grid = Arc::clone(p.background.grid());
    if p.u0.grid.as_ref() != grid.as_ref() {
        return Err(Error::GridMismatch("u0 grid differs from background".into()));
    }
    if !(p.u0.min() > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "u0 must be positive, min = {}",
            p.u0.min()
        )));
    }
    let (t0, span_end) = p.background.span();
    if !(p.t_end > t0 && p.t_end <= span_end + 1e-12) {
        return Err(Error::PreconditionViolated(format!(
            "t_end = {} outside background span ({t0}, {span_end}]",
            p.t_end
        )));
    }
    let target_sym = match &p.target_scalar {
        TargetScalar::Zero => true,
        TargetScalar::Sampled { values, .. } => values[0].len() == grid.n_theta,
    };
    let sym = p.background.symmetric() && p.u0.is_sym() && target_sym;
    let mut u: Vec<f64> = match (&p.u0.values, sym) {
        (Values::Sym(v), true) => v.clone(),
        _ => p.u0.to_full(),
    };
    let n = u.len();
    let opt = &p.options;

    let mut outputs: Vec<f64> = if p.outputs.is_empty() {
        p.background.output_times(t0, p.t_end)
    } else {
        p.outputs.clone()
    };
    outputs.retain(|&t| t >= t0 && t <= p.t_end + 1e-14);
    outputs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    outputs.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let mut times = Vec::new();
    let mut lapse = Vec::new();
    let mut next_out = 0;
    if (outputs[0] - t0).abs() < 1e-14 {
        times.push(t0);
        lapse.push(u.clone());
        next_out = 1;
    }

    // One semi-implicit sub-step; returns the new lapse.
    let sub_step = |t_from: f64, uu: &[f64], h: f64| -> Result<Vec<f64>> {
        let t_new = t_from + h;
        let bg_old = p.background.fields_at(t_from);
        let bg_new = p.background.fields_at(t_new);
        let h_old = expand_if_needed(&grid, sym, bg_old.h);
        let rs_old = expand_if_needed(&grid, sym, bg_old.r_slice);
        let ra_old = expand_if_needed(&grid, sym, bg_old.r_ambient);
        let h_new = expand_if_needed(&grid, sym, bg_new.h);
        let rt_old = expand_if_needed(&grid, sym, p.target_scalar.at(t_from, n));
        for (q, &hv) in h_new.iter().enumerate() {
            if !(hv > 0.0) {
                let _ = q;
                return Err(Error::ParabolicityLost(t_new));
            }
            if !(h_old[q] > 0.0) {
                return Err(Error::ParabolicityLost(t_from));
            }
        }
        let mut metric = p.background.surface_at(t_new);
        if !sym && metric.symmetric {
            metric = metric.to_full();
        }
        let lap = SliceLaplacian::new(&metric);
        // rhs = (H_new/h) u + reaction(t_from, u)
        let mut rhs = vec![0.0; n];
        for q in 0..n {
            let reaction = 0.5 * (uu[q] - uu[q].powi(3)) * rs_old[q] - 0.5 * uu[q] * ra_old[q]
                + 0.5 * uu[q].powi(3) * rt_old[q];
            rhs[q] = h_new[q] / h * uu[q] + reaction;
        }
        let u2: Vec<f64> = uu.iter().map(|&x| x * x).collect();
        let apply = |w: &[f64]| -> Vec<f64> {
            let lw = lap.apply(w);
            (0..n).map(|q| h_new[q] / h * w[q] - u2[q] * lw[q]).collect()
        };
        let lap_diag = lap.diag();
        let diag: Vec<f64> = (0..n).map(|q| h_new[q] / h - u2[q] * lap_diag[q]).collect();
        let sol = bicgstab(apply, &rhs, uu, &diag, opt.bicg_tol, opt.bicg_max_iter)?;
        for &x in &sol {
            if !x.is_finite() || x <= opt.u_min || x >= opt.u_cap {
                return Err(Error::LapseBlowup { t: t_new, min: opt.u_min, max: opt.u_cap });
            }
        }
        Ok(sol)
    };

    // Richardson ladder over sub-step counts {1, 2, 4}.
    let ladder = |t_from: f64, uu: &[f64], h: f64| -> Result<(Vec<f64>, f64)> {
        let t11 = sub_step(t_from, uu, h)?;
        let half = sub_step(t_from, uu, 0.5 * h)?;
        let t21 = sub_step(t_from + 0.5 * h, &half, 0.5 * h)?;
        let mut q = sub_step(t_from, uu, 0.25 * h)?;
        for k in 1..4 {
            q = sub_step(t_from + 0.25 * h * k as f64, &q, 0.25 * h)?;
        }
        let t31 = q;
        let mut t33 = vec![0.0; n];
        let mut est: f64 = 0.0;
        for k in 0..n {
            let t22 = 2.0 * t21[k] - t11[k];
            let t32 = 2.0 * t31[k] - t21[k];
            let v = (4.0 * t32 - t22) / 3.0;
            t33[k] = v;
            est = est.max((v - t32).abs());
        }
        Ok((t33, est))
    };

    let mut t = t0;
    let mut h_step = ((p.t_end - t0) / 64.0).min(0.25);
    let h_min = (p.t_end - t0) * 1e-13;
    let mut step_log = Vec::new();
    let mut stopped = None;
    let mut steps = 0;

    'outer: while t < p.t_end - 1e-14 {
        steps += 1;
        if steps > opt.max_steps {
            return Err(Error::NonConvergent(format!(
                "step budget {} exhausted at t = {t}",
                opt.max_steps
            )));
        }
        // Clip to the next output time and the end.
        let mut target = p.t_end;
        if next_out < outputs.len() {
            target = target.min(outputs[next_out]);
        }
        let h = h_step.min(target - t);
        let attempt = ladder(t, &u, h);
        match attempt {
            Err(Error::ParabolicityLost(tt)) => return Err(Error::ParabolicityLost(tt)),
            Err(_) if h > h_min => {
                h_step = 0.25 * h;
                continue;
            }
            Err(e) => {
                // Step underflow: stop here or report.
                if opt.allow_partial && times.len() > 0 {
                    stopped = Some(match e {
                        Error::LapseBlowup { .. } => StopReason::LapseRange,
                        _ => StopReason::StepUnderflow,
                    });
                    break 'outer;
                }
                return Err(Error::StepUnderflow(t));
            }
            Ok((u_new, est)) => {
                let scale = opt.atol + opt.rtol * u.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
                if est > scale && h > h_min {
                    h_step = h * (0.8 * (scale / est).sqrt()).clamp(0.25, 0.9);
                    continue;
                }
                t += h;
                u = u_new;
                step_log.push(h);
                if next_out < outputs.len() && (t - outputs[next_out]).abs() < 1e-13 {
                    times.push(outputs[next_out]);
                    lapse.push(u.clone());
                    next_out += 1;
                }
                let grow = if est > 0.0 {
                    (0.8 * (scale / est).sqrt()).clamp(0.3, 4.0)
                } else {
                    4.0
                };
                h_step = (h * grow).min(p.t_end - t0);
            }
        }
    }

    Ok(QSSolution {
        grid,
        symmetric: sym,
        times,
        lapse,
        reached_t: t,
        stopped,
        step_log,
    })
}

/// A scalar-flat collar interpolating boundary data to an extension.
#[derive(Debug, Clone)]
pub struct Bridge {
    /// g_c = g_t + u^2 dt^2 on the collar slices.
    pub metric: FoliatedMetric,
    pub sigma: f64,
    /// Initial lapse used for the flow.
    pub u0: Field,
    /// Measured boundary mean curvature of the bridge.
    pub boundary_h: Field,
    /// Mean curvature of the final slice in the bridge metric.
    pub endpoint_h_bridge: Field,
    /// Mean curvature of the same slice in the extension metric.
    pub endpoint_h_extension: Field,
    pub endpoint_lapse_min: f64,
    pub endpoint_lapse_max: f64,
    pub step_log: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct BridgeOptions {
    /// Starting collar depth; shrunk by halving until the endpoint lapse is
    /// certified away from 1. Defaults to the full extension span.
    pub sigma_init: Option<f64>,
    pub max_halvings: usize,
    pub qs: QSOptions,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        BridgeOptions { sigma_init: None, max_halvings: 20, qs: QSOptions::default() }
    }
}

/// Bridge construction: fit a scalar-flat collar between boundary data with
/// mean curvature `h_minus` and the extension's collar.
pub fn build_bridge(h_minus: &Field, extension: &FoliatedMetric) -> Result<Bridge> {
    build_bridge_with(h_minus, extension, &BridgeOptions::default())
}

pub fn build_bridge_with(
    h_minus: &Field,
    extension: &FoliatedMetric,
    opt: &BridgeOptions,
) -> Result<Bridge> {
    let zero = Field::constant(&extension.grid, 0.0, Unit::INV_LENGTH);
    build_tilted_bridge_with(0.0, h_minus, &zero, extension, opt)
}

/// Tilted variant: the initial lapse is
/// (H(Sigma, tilted ext) ) / (H_minus - 2s/(n-2) dpsi_dn), which keeps a
/// strict mean-curvature margin at the boundary for s > 0.
pub fn build_tilted_bridge(
    s: f64,
    h_minus: &Field,
    dpsi_dn: &Field,
    tilted_extension: &FoliatedMetric,
) -> Result<Bridge> {
    build_tilted_bridge_with(s, h_minus, dpsi_dn, tilted_extension, &BridgeOptions::default())
}

pub fn build_tilted_bridge_with(
    s: f64,
    h_minus: &Field,
    dpsi_dn: &Field,
    tilted_extension: &FoliatedMetric,
    opt: &BridgeOptions,
) -> Result<Bridge> {
    let grid = Arc::clone(&tilted_extension.grid);
    if h_minus.grid.as_ref() != grid.as_ref() || dpsi_dn.grid.as_ref() != grid.as_ref() {
        return Err(Error::GridMismatch("boundary data grid differs from extension".into()));
    }
    // The flow runs over the unit-lapse background sharing the extension's
    // surface family; the extension lapse must be 1 at the boundary slice so
    // the boundary mean curvatures match exactly.
    let lapse0_dev = tilted_extension.lapse[0]
        .iter()
        .fold(0.0_f64, |a, &b| a.max((b - 1.0).abs()));
    if lapse0_dev > 1e-8 {
        return Err(Error::PreconditionViolated(format!(
            "extension lapse differs from 1 at the boundary slice by {lapse0_dev:.2e}"
        )));
    }
    if !(s >= 0.0) {
        return Err(Error::PreconditionViolated("s must be nonnegative".into()));
    }

    let background = BackgroundSpec::Sampled(SampledBackground::new(tilted_extension)?);
    let t0 = tilted_extension.times[0];

    // Boundary mean curvature of the (tilted) extension.
    let unit_ext = match &background {
        BackgroundSpec::Sampled(sb) => &sb.fm,
        _ => unreachable!(),
    };
    let h_plus = slice_mean_curvature(unit_ext, 0)?;
    if !(h_plus.min() > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "extension boundary mean curvature must be positive, min = {}",
            h_plus.min()
        )));
    }
    if !(h_minus.min() > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "H_minus must be positive, min = {}",
            h_minus.min()
        )));
    }
    let q = dpsi_dn.scale(2.0 * s / (DIM as f64 - 2.0));
    // Untilted extension boundary H, for the tilt margin check.
    let h_plus_untilted = h_plus.add(&q);
    let margin_check = h_plus.zip(&h_plus_untilted, Unit::NONE, |hs, h| hs - 0.5 * h);
    if s > 0.0 && !(margin_check.min() > 0.0) {
        return Err(Error::PreconditionViolated(
            "tilt too strong: H(Sigma, tilted) must stay above half the untilted value".into(),
        ));
    }
    let denom = h_minus.sub(&q);
    if !(denom.min() > 0.0) {
        return Err(Error::PreconditionViolated(
            "H_minus - (2s/(n-2)) dpsi/dn must stay positive".into(),
        ));
    }
    let u0 = h_plus.div(&denom);
    if u0.max() > 1.0 + 1e-9 {
        return Err(Error::PreconditionViolated(format!(
            "H_minus must dominate the extension boundary mean curvature (max u0 = {})",
            u0.max()
        )));
    }
    let certify = 1e-6 * (1.0 - u0.min());
    if certify <= 0.0 {
        return Err(Error::BridgeDegenerate);
    }

    let span_end = *tilted_extension.times.last().unwrap();
    let sigma_init = opt.sigma_init.unwrap_or(span_end - t0).min(span_end - t0);

    // One flow over the full candidate collar; certification picks the
    // largest halved depth at which the lapse is provably not 1.
    let mut problem = QSProblem::new(background, u0.clone(), t0 + sigma_init);
    problem.options = opt.qs;
    problem.options.allow_partial = true;
    let sol = solve(&problem)?;

    let mut chosen: Option<usize> = None;
    'halving: for halving in 0..=opt.max_halvings {
        let sigma = sigma_init / (1 << halving) as f64;
        // Largest recorded time <= t0 + sigma (and <= reached).
        let mut best = None;
        for (k, &tk) in sol.times.iter().enumerate() {
            if tk <= t0 + sigma + 1e-13 && tk > t0 {
                best = Some(k);
            }
        }
        if let Some(k) = best {
            let min_u = sol.lapse[k].iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if min_u <= 1.0 - certify {
                chosen = Some(k);
                break 'halving;
            }
        }
    }
    let k_end = chosen.ok_or(Error::BridgeDegenerate)?;
    let sigma = sol.times[k_end] - t0;

    let times: Vec<f64> = sol.times[..=k_end].to_vec();
    let surfaces: Vec<SurfaceMetric> =
        times.iter().map(|&tk| problem.background.surface_at(tk)).collect();
    let lapse: Vec<Vec<f64>> = sol.lapse[..=k_end].to_vec();
    let metric = FoliatedMetric::new(&grid, times, surfaces, Some(lapse))?;

    let boundary_h = slice_mean_curvature(&metric, 0)?;
    let endpoint_h_bridge = slice_mean_curvature(&metric, k_end)?;
    // Mean curvature of the same slice inside the extension, with the
    // extension's own lapse.
    let k_ext = tilted_extension
        .times
        .iter()
        .position(|&tk| (tk - (t0 + sigma)).abs() < 1e-12)
        .unwrap_or(tilted_extension.slice_count() - 1);
    let endpoint_h_extension = slice_mean_curvature(tilted_extension, k_ext)?;

    let end_lapse = &metric.lapse[k_end];
    Ok(Bridge {
        sigma,
        u0,
        boundary_h,
        endpoint_h_bridge,
        endpoint_h_extension,
        endpoint_lapse_min: end_lapse.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
        endpoint_lapse_max: end_lapse.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        step_log: sol.step_log,
        metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{flat_collar, schwarzschild_collar};
    use crate::field::grid;

    fn flat_cone(g: &GridRef, r0: f64, r1: f64) -> BackgroundSpec {
        BackgroundSpec::FlatCone { grid: Arc::clone(g), r0, span: (0.0, r1 - r0) }
    }

    #[test]
    fn constant_one_is_a_fixed_point() {
        let g = grid(8, 8);
        let bg = flat_cone(&g, 1.0, 3.0);
        let u0 = Field::constant(&g, 1.0, Unit::NONE);
        let p = QSProblem::new(bg, u0, 2.0);
        let sol = solve(&p).unwrap();
        assert!((sol.reached_t - 2.0).abs() < 1e-12);
        for l in &sol.lapse {
            for &v in l {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_schwarzschild_lapse() {
        // u = (1 + a/r)^(-1/2) solves the flow over the flat cone.
        let g = grid(8, 8);
        let a = -0.8;
        let r0 = 1.0;
        let r1 = 21.0;
        let bg = flat_cone(&g, r0, r1);
        let u0 = Field::constant(&g, (1.0 + a / r0).powf(-0.5), Unit::NONE);
        let mut p = QSProblem::new(bg, u0, r1 - r0);
        p.options.rtol = 1e-9;
        let sol = solve(&p).unwrap();
        assert!(sol.stopped.is_none());
        let mut worst = 0.0_f64;
        for (k, &t) in sol.times.iter().enumerate() {
            let r = r0 + t;
            let exact = (1.0 + a / r).powf(-0.5);
            for &v in &sol.lapse[k] {
                worst = worst.max((v - exact).abs());
            }
        }
        assert!(worst < 1e-6, "sup error {worst}");
    }

    #[test]
    fn maximum_principle_axisymmetric() {
        let g = grid(16, 8);
        let bg = flat_cone(&g, 1.0, 2.0);
        let u0 = Field::sample_sym(&g, Unit::NONE, |t| 0.9 + 0.05 * t.cos());
        let mut p = QSProblem::new(bg, u0, 1.0);
        p.options.rtol = 1e-9;
        let sol = solve(&p).unwrap();
        assert!(sol.max_over_flow() <= 1.0 + 1e-8, "max {}", sol.max_over_flow());
    }

    #[test]
    fn comparison_principle() {
        let g = grid(12, 8);
        let bg = flat_cone(&g, 1.0, 2.0);
        let ua = Field::sample_sym(&g, Unit::NONE, |t| 0.8 + 0.05 * t.cos());
        let ub = Field::sample_sym(&g, Unit::NONE, |t| 0.9 + 0.05 * t.cos());
        let mut pa = QSProblem::new(bg.clone(), ua, 1.0);
        let mut pb = QSProblem::new(bg, ub, 1.0);
        pa.options.rtol = 1e-9;
        pb.options.rtol = 1e-9;
        let sa = solve(&pa).unwrap();
        let sb = solve(&pb).unwrap();
        assert_eq!(sa.times.len(), sb.times.len());
        for k in 0..sa.times.len() {
            for q in 0..sa.lapse[k].len() {
                assert!(sa.lapse[k][q] <= sb.lapse[k][q] + 1e-8);
            }
        }
    }

    #[test]
    fn sampled_background_consistency() {
        // A slice-sampled flat cone must reproduce the fixed point u = 1 up
        // to the finite-difference error of its cached curvature fields.
        let g = grid(8, 8);
        let r0 = 2.0;
        let times: Vec<f64> = (0..41).map(|k| r0 + 0.05 * k as f64).collect();
        let surfaces: Vec<SurfaceMetric> =
            times.iter().map(|&r| SurfaceMetric::round(&g, r)).collect();
        let fm = FoliatedMetric::unit_lapse(&g, times.clone(), surfaces).unwrap();
        let bg = BackgroundSpec::Sampled(SampledBackground::new(&fm).unwrap());
        let u0 = Field::constant(&g, 1.0, Unit::NONE);
        let mut p = QSProblem::new(bg, u0, *times.last().unwrap());
        p.options.rtol = 1e-9;
        let sol = solve(&p).unwrap();
        for l in &sol.lapse {
            for &v in l {
                assert!((v - 1.0).abs() < 1e-3, "drift {}", (v - 1.0).abs());
            }
        }
    }

    #[test]
    fn nonzero_target_scalar_steady_state() {
        // On the flat cone, u = c is steady when the prescribed curvature is
        // Rt = (1 - 1/c^2) R(g_t).
        let g = grid(8, 8);
        let (r0, r1) = (1.0, 2.0);
        let c = 1.3;
        let bg = flat_cone(&g, r0, r1);
        let rt_times: Vec<f64> = (0..161).map(|k| (r1 - r0) * k as f64 / 160.0).collect();
        let rt_values: Vec<Vec<f64>> = rt_times
            .iter()
            .map(|&t| {
                let r = r0 + t;
                vec![(1.0 - 1.0 / (c * c)) * 2.0 / (r * r); g.n_theta]
            })
            .collect();
        let u0 = Field::constant(&g, c, Unit::NONE);
        let mut p = QSProblem::new(bg, u0, r1 - r0);
        p.target_scalar = TargetScalar::Sampled { times: rt_times, values: rt_values };
        p.options.rtol = 1e-10;
        let sol = solve(&p).unwrap();
        for l in &sol.lapse {
            for &v in l {
                assert!((v - c).abs() < 1e-8, "drift {}", (v - c).abs());
            }
        }
    }

    #[test]
    fn bridge_contract_flat_to_schwarzschild() {
        // Boundary data of the flat unit ball (H_minus = 2) against the
        // Schwarzschild m = 0.4 exterior collar (boundary H = 2 sqrt(0.2)).
        // The scalar-flat bridge with that boundary is the flat annulus, so
        // its lapse over the Schwarzschild background is sqrt(1 - 2m/r).
        let g = grid(8, 8);
        let m = 0.4;
        let ext = schwarzschild_collar(&g, m, 1.0, 0.5, 65);
        let h_minus = Field::constant(&g, 2.0, Unit::INV_LENGTH);
        let bridge = build_bridge(&h_minus, &ext).unwrap();

        let err = bridge.boundary_h.sub(&h_minus).sup_norm();
        assert!(err < 1e-6, "boundary H error {err}");
        assert!(bridge.endpoint_lapse_max < 1.0);

        // Closed form along the whole collar.
        let mut worst = 0.0_f64;
        for (k, &tk) in bridge.metric.times.iter().enumerate() {
            let r = crate::catalog::schwarzschild_area_radius(m, 1.0, tk, 4096);
            let exact = (1.0 - 2.0 * m / r).sqrt();
            for &v in &bridge.metric.lapse[k] {
                worst = worst.max((v - exact).abs());
            }
        }
        assert!(worst < 1e-6, "lapse sup error vs closed form {worst}");

        // Endpoint mean curvature of the bridge dominates the extension's.
        let diff = bridge.endpoint_h_bridge.sub(&bridge.endpoint_h_extension);
        assert!(diff.min() > -1e-9);
        assert!(diff.max() > 1e-3);
    }

    #[test]
    fn bridge_degenerate_when_curvatures_agree() {
        let g = grid(8, 8);
        let ext = flat_collar(&g, 1.0, 1.5, 17);
        let h_minus = Field::constant(&g, 2.0, Unit::INV_LENGTH);
        match build_bridge(&h_minus, &ext) {
            Err(Error::BridgeDegenerate) => {}
            other => panic!("expected BridgeDegenerate, got {other:?}"),
        }
    }

    #[test]
    fn tilted_bridge_reduces_to_plain_at_s_zero() {
        let g = grid(8, 8);
        let m = 0.4;
        let ext = schwarzschild_collar(&g, m, 1.0, 0.5, 33);
        let h_minus = Field::constant(&g, 2.0, Unit::INV_LENGTH);
        let psi_n = Field::constant(&g, 1.0, Unit::INV_LENGTH);
        let plain = build_bridge(&h_minus, &ext).unwrap();
        let tilted = build_tilted_bridge(0.0, &h_minus, &psi_n, &ext).unwrap();
        assert_eq!(plain.sigma, tilted.sigma);
        for (a, b) in plain
            .metric
            .lapse
            .iter()
            .flatten()
            .zip(tilted.metric.lapse.iter().flatten())
        {
            assert_eq!(a, b, "lapse must agree bitwise at s = 0");
        }
    }

    #[test]
    fn tilted_bridge_initial_lapse_formula() {
        // Stand-in for the tilted collar: a collar whose boundary mean
        // curvature is 2 sqrt(0.2) - 0.1, the tilted value for m = 0.4,
        // s = 0.05, dpsi/dn = 1. Then u0 = (2 sqrt(0.2) - 0.1)/(2 - 0.1)
        // and the bridge boundary H must come out at 1.9.
        let g = grid(8, 8);
        let s = 0.05;
        let h_target: f64 = 2.0 * 0.2_f64.sqrt() - 0.1;
        let m_hat = 0.5 * (1.0 - (h_target / 2.0) * (h_target / 2.0));
        let ext = schwarzschild_collar(&g, m_hat, 1.0, 0.4, 65);
        let h_minus = Field::constant(&g, 2.0, Unit::INV_LENGTH);
        let psi_n = Field::constant(&g, 1.0, Unit::INV_LENGTH);
        let bridge = build_tilted_bridge(s, &h_minus, &psi_n, &ext).unwrap();
        let expect_u0 = h_target / 1.9;
        assert!((bridge.u0.max() - expect_u0).abs() < 1e-8, "u0 {}", bridge.u0.max());
        assert!((bridge.boundary_h.max() - 1.9).abs() < 1e-6, "H {}", bridge.boundary_h.max());

        // Over-tilting is rejected.
        match build_tilted_bridge(1.1, &h_minus, &psi_n, &ext) {
            Err(Error::PreconditionViolated(_)) => {}
            other => panic!("expected PreconditionViolated, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_is_scalar_flat() {
        let g = grid(16, 8);
        let bg = flat_cone(&g, 1.0, 1.4);
        let u0 = Field::sample_sym(&g, Unit::NONE, |t| 0.85 + 0.05 * t.cos());
        let mut p = QSProblem::new(bg.clone(), u0, 0.4);
        p.options.rtol = 1e-10;
        let sol = solve(&p).unwrap();
        let fm = sol.to_foliated(&bg).unwrap();
        let r = ambient_scalar_curvature(&fm).unwrap();
        // Interior slices: the flow prescribed Rt = 0.
        for k in 2..r.len() - 2 {
            assert!(r[k].sup_norm() < 5e-3, "slice {k}: {}", r[k].sup_norm());
        }
    }
}
