//! Small numerical kernels: finite-difference weights on arbitrary nodes,
//! Gauss-Legendre rules, a matrix-free BiCGStab, and a dense LU solve.

use crate::error::{Error, Result};

/// Finite-difference/interpolation weights on arbitrary nodes (Fornberg's
/// algorithm). Returns rows 0..=max_order; row m holds the weights of the
/// m-th derivative at `z` over the nodes `x`.
pub fn fd_weights(z: f64, x: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    assert!(n > max_order, "need more nodes than derivative order");
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Gauss-Legendre nodes and weights on [-1, 1], Newton iteration on the
/// three-term recurrence. Nodes ascend.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pair(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_pair(n, x);
        dp = d;
        nodes[n - 1 - k] = x;
        weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&t| half * t).collect(),
    )
}

/// Matrix-free BiCGStab with diagonal preconditioning.
pub fn bicgstab<F>(
    apply: F,
    b: &[f64],
    x0: &[f64],
    diag: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 1e-300 { 1.0 / d } else { 1.0 })
        .collect();
    bicgstab_prec(
        apply,
        b,
        x0,
        |v: &[f64]| v.iter().zip(&inv_diag).map(|(a, d)| a * d).collect(),
        rel_tol,
        max_iter,
    )
}

/// Matrix-free BiCGStab with a general (right) preconditioner closure.
/// Deterministic.
pub fn bicgstab_prec<F, M>(
    apply: F,
    b: &[f64],
    x0: &[f64],
    precond: M,
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = x0.to_vec();
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bnorm = norm2(b).max(1e-300);
    if norm2(&r) / bnorm <= rel_tol {
        return Ok(x);
    }
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for iter in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            return Err(Error::SolverDiverged(format!(
                "bicgstab breakdown (rho) at iteration {iter}"
            )));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond(&p);
        v = apply(&p_hat);
        let rhv = dot(&r_hat, &v);
        if rhv.abs() < 1e-300 {
            return Err(Error::SolverDiverged(format!(
                "bicgstab breakdown (r_hat.v) at iteration {iter}"
            )));
        }
        alpha = rho / rhv;
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) / bnorm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(x);
        }
        let s_hat = precond(&s);
        let t = apply(&s_hat);
        let tt = dot(&t, &t);
        if tt.abs() < 1e-300 {
            return Err(Error::SolverDiverged(format!(
                "bicgstab breakdown (t.t) at iteration {iter}"
            )));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) / bnorm <= rel_tol {
            return Ok(x);
        }
        if omega.abs() < 1e-300 {
            return Err(Error::SolverDiverged(format!(
                "bicgstab breakdown (omega) at iteration {iter}"
            )));
        }
    }
    Err(Error::SolverDiverged(format!(
        "bicgstab did not reach {rel_tol:.1e} in {max_iter} iterations"
    )))
}

/// Composite Simpson quadrature on non-uniform nodes: exact for cubics on
/// each node pair, trapezoid fallback on a trailing odd interval.
pub fn nonuniform_simpson(x: &[f64], f: &[f64]) -> f64 {
    assert_eq!(x.len(), f.len());
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 < n {
        let (h0, h1) = (x[i + 1] - x[i], x[i + 2] - x[i + 1]);
        let h = h0 + h1;
        // Three-point Newton-Cotes on arbitrary spacing.
        let c0 = h * (2.0 * h0 - h1) / (6.0 * h0);
        let c1 = h * h * h / (6.0 * h0 * h1);
        let c2 = h * (2.0 * h1 - h0) / (6.0 * h1);
        total += c0 * f[i] + c1 * f[i + 1] + c2 * f[i + 2];
        i += 2;
    }
    if i + 1 < n {
        total += 0.5 * (x[i + 1] - x[i]) * (f[i] + f[i + 1]);
    }
    total
}

/// Tridiagonal solve (Thomas algorithm), no pivoting.
pub fn tridiag_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    rhs[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = d[i] - c[i] * rhs[i + 1];
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense LU solve with partial pivoting; `a` is row-major n x n.
pub fn lu_solve(a: &mut [f64], b: &mut [f64]) -> Result<()> {
    let n = b.len();
    assert_eq!(a.len(), n * n);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut piv = k;
        let mut best = a[perm[k] * n + k].abs();
        for r in (k + 1)..n {
            let v = a[perm[r] * n + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return Err(Error::SolverDiverged("singular matrix in lu_solve".into()));
        }
        perm.swap(k, piv);
        let pk = perm[k];
        let akk = a[pk * n + k];
        for r in (k + 1)..n {
            let pr = perm[r];
            let f = a[pr * n + k] / akk;
            a[pr * n + k] = f;
            for c in (k + 1)..n {
                a[pr * n + c] -= f * a[pk * n + c];
            }
        }
    }
    // forward
    let mut y = vec![0.0; n];
    for r in 0..n {
        let mut s = b[perm[r]];
        for c in 0..r {
            s -= a[perm[r] * n + c] * y[c];
        }
        y[r] = s;
    }
    // backward
    for r in (0..n).rev() {
        let mut s = y[r];
        for c in (r + 1)..n {
            s -= a[perm[r] * n + c] * b[c];
        }
        b[r] = s / a[perm[r] * n + r];
    }
    Ok(())
}

/// Least squares via normal equations, small column counts only.
pub fn least_squares(cols: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = cols.len();
    let mut ata = vec![0.0; m * m];
    let mut atb = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            ata[i * m + j] = dot(&cols[i], &cols[j]);
        }
        atb[i] = dot(&cols[i], rhs);
    }
    lu_solve(&mut ata, &mut atb)?;
    Ok(atb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_weights_centered_first_derivative() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[1][0] + 0.5).abs() < 1e-14);
        assert!(w[1][1].abs() < 1e-14);
        assert!((w[1][2] - 0.5).abs() < 1e-14);
        assert!((w[2][0] - 1.0).abs() < 1e-14);
        assert!((w[2][1] + 2.0).abs() < 1e-14);
        assert!((w[2][2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fd_weights_exact_on_polynomials() {
        // Non-uniform nodes, derivative of x^4 at z.
        let x = [0.0, 0.13, 0.41, 0.77, 1.0, 1.3];
        let z = 0.52;
        let w = fd_weights(z, &x, 2);
        let d1: f64 = x.iter().zip(&w[1]).map(|(xi, wi)| wi * xi.powi(4)).sum();
        let d2: f64 = x.iter().zip(&w[2]).map(|(xi, wi)| wi * xi.powi(4)).sum();
        assert!((d1 - 4.0 * z.powi(3)).abs() < 1e-10);
        assert!((d2 - 12.0 * z * z).abs() < 1e-9);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let m2: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
        assert!((m2 - 2.0 / 3.0).abs() < 1e-14);
        let m14: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(14)).sum();
        assert!((m14 - 2.0 / 15.0).abs() < 1e-13);
    }

    #[test]
    fn bicgstab_solves_small_spd_system() {
        // 1-D Laplacian, Dirichlet.
        let n = 40;
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for i in 0..n {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < n { v[i + 1] } else { 0.0 };
                out[i] = 2.0 * v[i] - l - r;
            }
            out
        };
        let b = vec![1.0; n];
        let diag = vec![2.0; n];
        let x = bicgstab(apply, &b, &vec![0.0; n], &diag, 1e-12, 1000).unwrap();
        let ax = apply(&x);
        for i in 0..n {
            assert!((ax[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lu_solves_dense_system() {
        let mut a = vec![4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let mut b = vec![1.0, 2.0, 3.0];
        lu_solve(&mut a, &mut b).unwrap();
        // Verify against the original matrix.
        let a0 = [4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let r0 = a0[0] * b[0] + a0[1] * b[1] + a0[2] * b[2];
        let r1 = a0[3] * b[0] + a0[4] * b[1] + a0[5] * b[2];
        let r2 = a0[6] * b[0] + a0[7] * b[1] + a0[8] * b[2];
        assert!((r0 - 1.0).abs() < 1e-12);
        assert!((r1 - 2.0).abs() < 1e-12);
        assert!((r2 - 3.0).abs() < 1e-12);
    }
}
