//! Exact arithmetic on halfspace polytopes and zonotopes.
//!
//! Zonotopes are the canonical representation for disturbance-derived sets:
//! they are closed under affine maps and Minkowski sums, and their support
//! function is exact, which is all the Pontryagin differences here need.

mod hpoly;
mod zonotope;

pub use hpoly::HPolytope;
pub use zonotope::{Zonotope, DEFAULT_GENERATOR_BUDGET, MERGE_REL_ERROR};

use crate::lp::LpError;

#[derive(Debug, Clone, PartialEq)]
pub enum SetError {
    DimensionMismatch { expected: usize, got: usize },
    NegativeScale(f64),
    DegenerateZonotope,
    TooManyGenerators { generators: usize, budget: usize },
    EmptyPolytope,
    Lp(LpError),
}

impl std::fmt::Display for SetError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SetError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            SetError::NegativeScale(s) => write!(f, "negative scale factor {s}"),
            SetError::DegenerateZonotope => write!(f, "zonotope is not full-dimensional"),
            SetError::TooManyGenerators { generators, budget } => {
                write!(f, "{generators} generators exceed the facet-enumeration budget of {budget}")
            }
            SetError::EmptyPolytope => write!(f, "polytope is empty"),
            SetError::Lp(e) => write!(f, "lp failure: {e}"),
        }
    }
}

impl std::error::Error for SetError {}

impl From<LpError> for SetError {
    fn from(e: LpError) -> Self {
        SetError::Lp(e)
    }
}

/// Deterministic direction grid used for support-function comparisons when
/// merging generators and in self-checks.
pub(crate) fn direction_grid(dim: usize) -> Vec<nalgebra::DVector<f64>> {
    use nalgebra::DVector;
    let mut dirs = Vec::new();
    if dim == 2 {
        let m = 64usize;
        for i in 0..m {
            let th = std::f64::consts::PI * (i as f64) / (m as f64);
            dirs.push(DVector::from_vec(vec![th.cos(), th.sin()]));
        }
    } else {
        for i in 0..dim {
            let mut d = DVector::zeros(dim);
            d[i] = 1.0;
            dirs.push(d);
        }
        // sign patterns (+-1, ..., +-1) / sqrt(dim)
        let scale = 1.0 / (dim as f64).sqrt();
        for bits in 0..(1usize << dim) {
            let mut d = DVector::zeros(dim);
            for i in 0..dim {
                d[i] = if bits >> i & 1 == 1 { -scale } else { scale };
            }
            dirs.push(d);
        }
    }
    dirs
}
