//! Nodal scalar fields on a sphere grid.
//!
//! A field is either ring-resolved (rotationally symmetric, one value per
//! theta ring) or fully nodal. Arithmetic between the two promotes to full.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridRef, SphereGrid};

/// Dimensional tag: power of length carried by the values (geometric units).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Unit(pub i8);

impl Unit {
    pub const NONE: Unit = Unit(0);
    pub const LENGTH: Unit = Unit(1);
    pub const AREA: Unit = Unit(2);
    pub const CURVATURE: Unit = Unit(-2);
    pub const INV_LENGTH: Unit = Unit(-1);
}

#[derive(Debug, Clone)]
pub enum Values {
    /// One value per theta ring; constant in phi.
    Sym(Vec<f64>),
    /// Row-major `[i_theta][j_phi]`.
    Full(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Field {
    pub grid: GridRef,
    pub values: Values,
    pub unit: Unit,
}

impl Field {
    pub fn constant(grid: &GridRef, c: f64, unit: Unit) -> Field {
        Field {
            grid: Arc::clone(grid),
            values: Values::Sym(vec![c; grid.n_theta]),
            unit,
        }
    }

    pub fn from_sym(grid: &GridRef, v: Vec<f64>, unit: Unit) -> Field {
        assert_eq!(v.len(), grid.n_theta);
        Field { grid: Arc::clone(grid), values: Values::Sym(v), unit }
    }

    pub fn from_full(grid: &GridRef, v: Vec<f64>, unit: Unit) -> Field {
        assert_eq!(v.len(), grid.node_count());
        Field { grid: Arc::clone(grid), values: Values::Full(v), unit }
    }

    /// Sample a function of (theta, phi) on every node.
    pub fn sample(grid: &GridRef, unit: Unit, f: impl Fn(f64, f64) -> f64) -> Field {
        let mut v = vec![0.0; grid.node_count()];
        for i in 0..grid.n_theta {
            for j in 0..grid.n_phi {
                v[grid.idx(i, j)] = f(grid.theta[i], grid.phi[j]);
            }
        }
        Field::from_full(grid, v, unit)
    }

    /// Sample a function of theta on every ring.
    pub fn sample_sym(grid: &GridRef, unit: Unit, f: impl Fn(f64) -> f64) -> Field {
        let v = grid.theta.iter().map(|&t| f(t)).collect();
        Field::from_sym(grid, v, unit)
    }

    pub fn is_sym(&self) -> bool {
        matches!(self.values, Values::Sym(_))
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid.as_ref() != other.grid.as_ref() {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.grid.n_theta, self.grid.n_phi, other.grid.n_theta, other.grid.n_phi
            )));
        }
        Ok(())
    }

    /// Value at node (i, j).
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match &self.values {
            Values::Sym(v) => v[i],
            Values::Full(v) => v[self.grid.idx(i, j)],
        }
    }

    /// Expand to a full nodal vector.
    pub fn to_full(&self) -> Vec<f64> {
        match &self.values {
            Values::Full(v) => v.clone(),
            Values::Sym(v) => {
                let np = self.grid.n_phi;
                let mut out = vec![0.0; self.grid.node_count()];
                for i in 0..self.grid.n_theta {
                    for j in 0..np {
                        out[i * np + j] = v[i];
                    }
                }
                out
            }
        }
    }

    pub fn min(&self) -> f64 {
        self.fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.fold(0.0, |a, b| a.max(b.abs()))
    }

    fn fold(&self, init: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        match &self.values {
            Values::Sym(v) => v.iter().fold(init, |a, &b| f(a, b)),
            Values::Full(v) => v.iter().fold(init, |a, &b| f(a, b)),
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.values {
            Values::Sym(v) => v.iter().all(|x| x.is_finite()),
            Values::Full(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    /// Integral against the round sphere measure.
    pub fn integrate_round(&self) -> f64 {
        match &self.values {
            Values::Sym(v) => self.grid.integrate_sym(v),
            Values::Full(v) => self.grid.integrate_full(v),
        }
    }

    /// Mean over the round sphere.
    pub fn mean_round(&self) -> f64 {
        self.integrate_round() / (4.0 * std::f64::consts::PI)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        let values = match &self.values {
            Values::Sym(v) => Values::Sym(v.iter().map(|&x| f(x)).collect()),
            Values::Full(v) => Values::Full(v.iter().map(|&x| f(x)).collect()),
        };
        Field { grid: Arc::clone(&self.grid), values, unit: self.unit }
    }

    pub fn zip(&self, other: &Field, unit: Unit, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(self.same_grid(other).is_ok());
        let values = match (&self.values, &other.values) {
            (Values::Sym(a), Values::Sym(b)) => {
                Values::Sym(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            }
            _ => {
                let a = self.to_full();
                let b = other.to_full();
                Values::Full(a.iter().zip(&b).map(|(&x, &y)| f(x, y)).collect())
            }
        };
        Field { grid: Arc::clone(&self.grid), values, unit }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip(other, self.unit, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip(other, self.unit, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip(other, Unit(self.unit.0 + other.unit.0), |a, b| a * b)
    }

    pub fn div(&self, other: &Field) -> Field {
        self.zip(other, Unit(self.unit.0 - other.unit.0), |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|x| c * x)
    }
}

/// Pointwise sup-norm distance of two fields on the same grid.
pub fn sup_distance(a: &Field, b: &Field) -> f64 {
    a.sub(b).sup_norm()
}

pub fn grids_match(a: &GridRef, b: &GridRef) -> Result<()> {
    if a.as_ref() != b.as_ref() {
        return Err(Error::GridMismatch(format!(
            "{}x{} vs {}x{}",
            a.n_theta, a.n_phi, b.n_theta, b.n_phi
        )));
    }
    Ok(())
}

/// Convenience: shared grid handle.
pub fn grid(n_theta: usize, n_phi: usize) -> GridRef {
    SphereGrid::new(n_theta, n_phi).expect("valid grid shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_constant_to_4pi() {
        let g = grid(12, 16);
        let f = Field::constant(&g, 1.0, Unit::NONE);
        assert!((f.integrate_round() - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn sym_and_full_agree() {
        let g = grid(8, 8);
        let a = Field::sample_sym(&g, Unit::NONE, |t| t.cos());
        let b = Field::sample(&g, Unit::NONE, |t, _| t.cos());
        assert!(sup_distance(&a, &b) < 1e-15);
        assert!((a.integrate_round() - b.integrate_round()).abs() < 1e-13);
    }
}
