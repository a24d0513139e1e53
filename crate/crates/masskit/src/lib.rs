//! masskit: numerical machinery for asymptotically flat metric extensions.
//!
//! The crate builds scalar-flat collar ("bridge") metrics by solving a
//! prescribed-scalar-curvature parabolic equation for the radial lapse,
//! smooths Lipschitz corners between metrics while tracking the resulting
//! scalar-curvature concentration, and runs conformal deformations of the
//! exterior region that trade boundary mean curvature against total mass.
//! Everything is desk-scale: sphere grids of a few thousand nodes, radial
//! stacks of a few hundred slices, plain f64.
//!
//! Entry points:
//! - [`geometry`]: sphere grids, surface/foliated metrics, curvature operators.
//! - [`mass`]: ADM flux mass, expansion-coefficient fits, Hawking mass.
//! - [`quasispherical`]: the parabolic lapse solver and bridge construction.
//! - [`mollifier`]: corner smoothing and curvature concentration profiles.
//! - [`conformal`]: exterior elliptic solves and conformal bookkeeping.
//! - [`pipeline`]: the five-stage mass reduction procedure and validation suites.
//!
//! All values are immutable once constructed; operations are pure functions
//! and safe to call concurrently. Runs are deterministic.

pub mod error;
pub mod linalg;
pub mod grid;
pub mod field;
pub mod geometry;
pub mod mass;
pub mod quasispherical;
pub mod catalog;
pub mod mollifier;
pub mod conformal;

pub use error::{Error, Result};
