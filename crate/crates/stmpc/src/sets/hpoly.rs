use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{SetError, Zonotope};
use crate::lp::{self, LpOutcome, FEAS_TOL};

/// Convex polytope in halfspace form `{x : H x <= h}`.
///
/// Facet normals are unit length by construction so offsets and tolerances
/// are comparable across rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HPolyRepr", into = "HPolyRepr")]
pub struct HPolytope {
    h_mat: DMatrix<f64>,
    h_vec: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct HPolyRepr {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(rename = "h")]
    b: Vec<f64>,
}

impl TryFrom<HPolyRepr> for HPolytope {
    type Error = String;

    fn try_from(r: HPolyRepr) -> Result<Self, String> {
        if r.h.len() != r.b.len() {
            return Err(format!("H has {} rows but h has {} entries", r.h.len(), r.b.len()));
        }
        let dim = r.h.first().map_or(0, |row| row.len());
        if r.h.iter().any(|row| row.len() != dim) {
            return Err("ragged H matrix".into());
        }
        let h_mat = DMatrix::from_row_iterator(r.h.len(), dim, r.h.iter().flatten().copied());
        Ok(HPolytope::new(h_mat, DVector::from_vec(r.b)))
    }
}

impl From<HPolytope> for HPolyRepr {
    fn from(p: HPolytope) -> Self {
        HPolyRepr {
            h: (0..p.h_mat.nrows())
                .map(|i| p.h_mat.row(i).iter().copied().collect())
                .collect(),
            b: p.h_vec.iter().copied().collect(),
        }
    }
}

impl HPolytope {
    /// Build from raw rows; nonzero rows are normalized to unit norm.
    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Self {
        assert_eq!(h_mat.nrows(), h_vec.len(), "row count mismatch");
        let mut h_mat = h_mat;
        let mut h_vec = h_vec;
        for i in 0..h_mat.nrows() {
            let norm = h_mat.row(i).norm();
            if norm > 1e-14 {
                for j in 0..h_mat.ncols() {
                    h_mat[(i, j)] /= norm;
                }
                h_vec[i] /= norm;
            }
        }
        Self { h_mat, h_vec }
    }

    /// Axis-aligned box `lower <= x <= upper`.
    pub fn from_box(lower: &DVector<f64>, upper: &DVector<f64>) -> Self {
        let n = lower.len();
        assert_eq!(upper.len(), n);
        let mut h_mat = DMatrix::zeros(2 * n, n);
        let mut h_vec = DVector::zeros(2 * n);
        for i in 0..n {
            h_mat[(2 * i, i)] = 1.0;
            h_vec[2 * i] = upper[i];
            h_mat[(2 * i + 1, i)] = -1.0;
            h_vec[2 * i + 1] = -lower[i];
        }
        Self { h_mat, h_vec }
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.h_mat
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.h_vec
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.h_mat.row(i).transpose()
    }

    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> bool {
        let vals = &self.h_mat * x;
        (0..self.num_rows()).all(|i| vals[i] <= self.h_vec[i] + tol)
    }

    /// max c.x over the polytope.
    pub fn maximize(&self, c: &DVector<f64>) -> Result<LpOutcome, SetError> {
        Ok(lp::maximize(c, &self.h_mat, &self.h_vec)?)
    }

    /// Emptiness via the feasibility LP.
    pub fn is_empty(&self, tol: f64) -> Result<bool, SetError> {
        Ok(matches!(lp::feasible_point(&self.h_mat, &self.h_vec, tol)?, LpOutcome::Infeasible))
    }

    /// A feasible point, if one exists.
    pub fn any_point(&self, tol: f64) -> Result<Option<DVector<f64>>, SetError> {
        match lp::feasible_point(&self.h_mat, &self.h_vec, tol)? {
            LpOutcome::Optimal { x, .. } => Ok(Some(x)),
            _ => Ok(None),
        }
    }

    /// Pontryagin difference with a zonotope: each offset is lowered by the
    /// zonotope's support in the facet direction. The result may be empty;
    /// callers decide what emptiness means.
    pub fn pontryagin_diff(&self, z: &Zonotope) -> Result<HPolytope, SetError> {
        if z.dim() != self.dim() {
            return Err(SetError::DimensionMismatch { expected: self.dim(), got: z.dim() });
        }
        let mut h_vec = self.h_vec.clone();
        for i in 0..self.num_rows() {
            h_vec[i] -= z.support(&self.row(i));
        }
        Ok(HPolytope { h_mat: self.h_mat.clone(), h_vec })
    }

    /// true iff the zonotope fits inside: support(Z, H_i) <= h_i + tol per row.
    pub fn contains_zonotope(&self, z: &Zonotope, tol: f64) -> bool {
        (0..self.num_rows()).all(|i| z.support(&self.row(i)) <= self.h_vec[i] + tol)
    }

    /// true iff `inner` (another H-polytope) fits inside, decided by one LP
    /// per facet of `self`. `inner` must be nonempty.
    pub fn contains_hpoly(&self, inner: &HPolytope, tol: f64) -> Result<bool, SetError> {
        for i in 0..self.num_rows() {
            match inner.maximize(&self.row(i))? {
                LpOutcome::Optimal { value, .. } => {
                    if value > self.h_vec[i] + tol {
                        return Ok(false);
                    }
                }
                LpOutcome::Unbounded => return Ok(false),
                LpOutcome::Infeasible => return Err(SetError::EmptyPolytope),
            }
        }
        Ok(true)
    }

    /// `{x : self contains M x}` — rows become H M.
    pub fn preimage(&self, m: &DMatrix<f64>) -> HPolytope {
        assert_eq!(m.nrows(), self.dim());
        HPolytope::new(&self.h_mat * m, self.h_vec.clone())
    }

    /// Concatenate facet rows (set intersection).
    pub fn intersect(&self, other: &HPolytope) -> HPolytope {
        assert_eq!(self.dim(), other.dim());
        let rows = self.num_rows() + other.num_rows();
        let mut h_mat = DMatrix::zeros(rows, self.dim());
        let mut h_vec = DVector::zeros(rows);
        h_mat.rows_mut(0, self.num_rows()).copy_from(&self.h_mat);
        h_mat
            .rows_mut(self.num_rows(), other.num_rows())
            .copy_from(&other.h_mat);
        h_vec.rows_mut(0, self.num_rows()).copy_from(&self.h_vec);
        h_vec
            .rows_mut(self.num_rows(), other.num_rows())
            .copy_from(&other.h_vec);
        HPolytope { h_mat, h_vec }
    }

    /// Remove redundant rows: row i goes when maximizing H_i x over the other
    /// rows stays below h_i + tol. Errors with EmptyPolytope on an infeasible
    /// input.
    pub fn reduce(&self, tol: f64) -> Result<HPolytope, SetError> {
        if self.is_empty(FEAS_TOL)? {
            return Err(SetError::EmptyPolytope);
        }
        let mut keep: Vec<usize> = (0..self.num_rows()).collect();
        let mut i = 0;
        while i < keep.len() {
            if keep.len() == 1 {
                break;
            }
            let cand = keep[i];
            let others: Vec<usize> = keep.iter().copied().filter(|&j| j != cand).collect();
            let mut h_mat = DMatrix::zeros(others.len(), self.dim());
            let mut h_vec = DVector::zeros(others.len());
            for (r, &j) in others.iter().enumerate() {
                h_mat.row_mut(r).copy_from(&self.h_mat.row(j));
                h_vec[r] = self.h_vec[j];
            }
            let c = self.row(cand);
            let redundant = match lp::maximize(&c, &h_mat, &h_vec)? {
                LpOutcome::Optimal { value, .. } => value <= self.h_vec[cand] + tol,
                LpOutcome::Unbounded => false,
                LpOutcome::Infeasible => unreachable!("subset of a nonempty polytope"),
            };
            if redundant {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        let mut h_mat = DMatrix::zeros(keep.len(), self.dim());
        let mut h_vec = DVector::zeros(keep.len());
        for (r, &j) in keep.iter().enumerate() {
            h_mat.row_mut(r).copy_from(&self.h_mat.row(j));
            h_vec[r] = self.h_vec[j];
        }
        Ok(HPolytope { h_mat, h_vec })
    }

    /// Vertex enumeration for 2-D polytopes: intersect facet pairs, keep the
    /// feasible points, order them by angle around the centroid.
    pub fn vertices_2d(&self, tol: f64) -> Result<Vec<DVector<f64>>, SetError> {
        if self.dim() != 2 {
            return Err(SetError::DimensionMismatch { expected: 2, got: self.dim() });
        }
        let q = self.num_rows();
        let mut verts: Vec<DVector<f64>> = Vec::new();
        for i in 0..q {
            for j in (i + 1)..q {
                let a = DMatrix::from_row_slice(
                    2,
                    2,
                    &[self.h_mat[(i, 0)], self.h_mat[(i, 1)], self.h_mat[(j, 0)], self.h_mat[(j, 1)]],
                );
                let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
                if det.abs() < 1e-12 {
                    continue;
                }
                let b = DVector::from_vec(vec![self.h_vec[i], self.h_vec[j]]);
                let x = DVector::from_vec(vec![
                    (a[(1, 1)] * b[0] - a[(0, 1)] * b[1]) / det,
                    (-a[(1, 0)] * b[0] + a[(0, 0)] * b[1]) / det,
                ]);
                if self.contains_point(&x, tol) && !verts.iter().any(|v| (v - &x).norm() < 1e-9) {
                    verts.push(x);
                }
            }
        }
        if verts.is_empty() {
            return Ok(verts);
        }
        let cx = verts.iter().map(|v| v[0]).sum::<f64>() / verts.len() as f64;
        let cy = verts.iter().map(|v| v[1]).sum::<f64>() / verts.len() as f64;
        verts.sort_by(|a, b| {
            let ta = (a[1] - cy).atan2(a[0] - cx);
            let tb = (b[1] - cy).atan2(b[0] - cx);
            ta.partial_cmp(&tb).unwrap()
        });
        Ok(verts)
    }
}
