use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{direction_grid, HPolytope, SetError};

/// Default generator budget for halfspace conversion.
pub const DEFAULT_GENERATOR_BUDGET: usize = 16;

/// Relative support-function error allowed when merging generators during
/// order reduction; beyond this the conversion refuses instead of silently
/// over-approximating.
pub const MERGE_REL_ERROR: f64 = 1e-6;

/// Centrally symmetric polytope `{c + G xi : |xi|_inf <= 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ZonoRepr", into = "ZonoRepr")]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ZonoRepr {
    c: Vec<f64>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
}

impl TryFrom<ZonoRepr> for Zonotope {
    type Error = String;

    fn try_from(r: ZonoRepr) -> Result<Self, String> {
        let n = r.c.len();
        if r.g.len() != n {
            return Err(format!("G has {} rows but c has length {}", r.g.len(), n));
        }
        let cols = r.g.first().map_or(0, |row| row.len());
        if r.g.iter().any(|row| row.len() != cols) {
            return Err("ragged G matrix".into());
        }
        let generators = DMatrix::from_row_iterator(n, cols, r.g.iter().flatten().copied());
        Ok(Zonotope { center: DVector::from_vec(r.c), generators })
    }
}

impl From<Zonotope> for ZonoRepr {
    fn from(z: Zonotope) -> Self {
        ZonoRepr {
            c: z.center.iter().copied().collect(),
            g: (0..z.generators.nrows())
                .map(|i| z.generators.row(i).iter().copied().collect())
                .collect(),
        }
    }
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Self {
        assert_eq!(center.len(), generators.nrows(), "center/generator dimension mismatch");
        Self { center, generators }
    }

    /// Origin-centered axis-aligned box with the given half-widths.
    pub fn origin_box(half_widths: &DVector<f64>) -> Self {
        let n = half_widths.len();
        Self {
            center: DVector::zeros(n),
            generators: DMatrix::from_diagonal(half_widths),
        }
    }

    /// Single point (no generators).
    pub fn point(center: &DVector<f64>) -> Self {
        let n = center.len();
        Self { center: center.clone(), generators: DMatrix::zeros(n, 0) }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    /// Support function: max over the set of d.x = d.c + sum_j |d.G_j|.
    pub fn support(&self, d: &DVector<f64>) -> f64 {
        let mut v = d.dot(&self.center);
        for j in 0..self.generators.ncols() {
            v += d.dot(&self.generators.column(j).into_owned()).abs();
        }
        v
    }

    /// Symmetric extent in direction d, ignoring the center.
    pub fn radius(&self, d: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        for j in 0..self.generators.ncols() {
            v += d.dot(&self.generators.column(j).into_owned()).abs();
        }
        v
    }

    pub fn is_origin_centered(&self, tol: f64) -> bool {
        self.center.amax() <= tol
    }

    /// Image under a linear map: (Mc, MG).
    pub fn affine_map(&self, m: &DMatrix<f64>) -> Zonotope {
        assert_eq!(m.ncols(), self.dim(), "map/zonotope dimension mismatch");
        Zonotope { center: m * &self.center, generators: m * &self.generators }
    }

    /// Minkowski sum: centers add, generator lists concatenate.
    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope, SetError> {
        if self.dim() != other.dim() {
            return Err(SetError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let g = self.num_generators() + other.num_generators();
        let mut generators = DMatrix::zeros(self.dim(), g);
        generators
            .columns_mut(0, self.num_generators())
            .copy_from(&self.generators);
        generators
            .columns_mut(self.num_generators(), other.num_generators())
            .copy_from(&other.generators);
        Ok(Zonotope { center: &self.center + &other.center, generators })
    }

    pub fn scale(&self, lambda: f64) -> Result<Zonotope, SetError> {
        if lambda < 0.0 {
            return Err(SetError::NegativeScale(lambda));
        }
        Ok(Zonotope { center: &self.center * lambda, generators: &self.generators * lambda })
    }

    fn rank(&self) -> usize {
        if self.num_generators() == 0 {
            return 0;
        }
        self.generators.clone().svd(false, false).rank(1e-12)
    }

    /// Girard order reduction: keep the largest generators and replace the
    /// rest by their interval hull. Returns the reduced zonotope and the
    /// worst relative support inflation over a deterministic direction grid.
    pub fn reduce_generators(&self, target: usize) -> (Zonotope, f64) {
        let n = self.dim();
        let g = self.num_generators();
        if g <= target || target < n {
            return (self.clone(), 0.0);
        }
        let mut idx: Vec<usize> = (0..g).collect();
        idx.sort_by(|&a, &b| {
            let na = self.generators.column(a).norm();
            let nb = self.generators.column(b).norm();
            na.partial_cmp(&nb).unwrap().then(a.cmp(&b))
        });
        let n_merge = g - (target - n);
        let (merge, keep) = idx.split_at(n_merge);
        let mut box_hw = DVector::zeros(n);
        for &j in merge {
            for i in 0..n {
                box_hw[i] += self.generators[(i, j)].abs();
            }
        }
        let mut generators = DMatrix::zeros(n, keep.len() + n);
        let mut keep_sorted = keep.to_vec();
        keep_sorted.sort_unstable();
        for (c, &j) in keep_sorted.iter().enumerate() {
            generators.column_mut(c).copy_from(&self.generators.column(j));
        }
        for i in 0..n {
            generators[(i, keep.len() + i)] = box_hw[i];
        }
        let reduced = Zonotope { center: self.center.clone(), generators };
        let mut rel_err = 0.0f64;
        for d in direction_grid(n) {
            let before = self.support(&d);
            let after = reduced.support(&d);
            let denom = before.abs().max(1e-30);
            rel_err = rel_err.max((after - before) / denom);
        }
        (reduced, rel_err)
    }

    /// Exact halfspace conversion. Every (n-1)-subset of generators donates a
    /// facet-normal candidate (generalized cross product); offsets come from
    /// the support function, so the representation is lossless for full-rank
    /// zonotopes. When the combination count exceeds the budget implied by
    /// `g_max`, generators are merged first; merging is refused when it would
    /// inflate any support value by more than MERGE_REL_ERROR relatively.
    ///
    /// Returns the polytope and whether an over-approximating merge happened.
    pub fn to_hpolytope(&self, g_max: usize) -> Result<(HPolytope, bool), SetError> {
        let n = self.dim();
        if n == 1 {
            let r = self.radius(&DVector::from_vec(vec![1.0]));
            let c = self.center[0];
            return Ok((
                HPolytope::new(
                    DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
                    DVector::from_vec(vec![c + r, -c + r]),
                ),
                false,
            ));
        }
        if self.rank() < n {
            return Err(SetError::DegenerateZonotope);
        }
        let budget = combinations(g_max.max(n), n - 1);
        let mut work = self.clone();
        let mut over_approximated = false;
        if combinations(work.num_generators(), n - 1) > budget {
            let (reduced, rel_err) = work.reduce_generators(g_max.max(n));
            if rel_err > MERGE_REL_ERROR {
                return Err(SetError::TooManyGenerators {
                    generators: self.num_generators(),
                    budget: g_max,
                });
            }
            over_approximated = rel_err > 0.0;
            work = reduced;
        }

        let g = work.num_generators();
        let mut normals: Vec<DVector<f64>> = Vec::new();
        let mut combo = vec![0usize; n - 1];
        enumerate_combinations(g, n - 1, &mut combo, 0, 0, &mut |sel| {
            if let Some(nv) = cross_normal(&work.generators, sel) {
                let norm = nv.norm();
                if norm > 1e-12 {
                    let unit = nv / norm;
                    // merge only exactly-parallel directions; near-parallel
                    // ones are genuine facets whose loss would inflate the set
                    let dup = normals.iter().any(|u| (u.dot(&unit).abs() - 1.0).abs() < 1e-15);
                    if !dup {
                        normals.push(unit);
                    }
                }
            }
        });
        if normals.is_empty() {
            return Err(SetError::DegenerateZonotope);
        }
        let rows = 2 * normals.len();
        let mut h_mat = DMatrix::zeros(rows, n);
        let mut h_vec = DVector::zeros(rows);
        for (i, d) in normals.iter().enumerate() {
            let neg = -d;
            h_mat.row_mut(2 * i).copy_from(&d.transpose());
            h_vec[2 * i] = work.support(d);
            h_mat.row_mut(2 * i + 1).copy_from(&neg.transpose());
            h_vec[2 * i + 1] = work.support(&neg);
        }
        let poly = HPolytope::new(h_mat, h_vec);
        // in 2-D every distinct generator direction is a true facet (edge
        // length 2|g_j| > 0), so the representation is already minimal;
        // higher dimensions can produce supporting-but-redundant rows
        let poly = if n > 2 { poly.reduce(1e-12)? } else { poly };
        Ok((poly, over_approximated))
    }

    /// Zonogon boundary walk (2-D only): generators sorted by angle trace the
    /// boundary; vertices come in symmetric pairs around the center.
    pub fn vertices_2d(&self) -> Result<Vec<DVector<f64>>, SetError> {
        if self.dim() != 2 {
            return Err(SetError::DimensionMismatch { expected: 2, got: self.dim() });
        }
        let mut gens: Vec<DVector<f64>> = Vec::new();
        for j in 0..self.num_generators() {
            let mut g = self.generators.column(j).into_owned();
            if g.norm() < 1e-14 {
                continue;
            }
            // flip into the upper half-plane so angles live in [0, pi)
            if g[1] < 0.0 || (g[1] == 0.0 && g[0] < 0.0) {
                g = -g;
            }
            gens.push(g);
        }
        if gens.is_empty() {
            return Ok(vec![self.center.clone()]);
        }
        gens.sort_by(|a, b| {
            let ta = a[1].atan2(a[0]);
            let tb = b[1].atan2(b[0]);
            ta.partial_cmp(&tb).unwrap()
        });
        let mut start = self.center.clone();
        for g in &gens {
            start -= g;
        }
        let mut verts = Vec::with_capacity(2 * gens.len());
        let mut cur = start.clone();
        verts.push(cur.clone());
        for g in &gens {
            cur += g * 2.0;
            verts.push(cur.clone());
        }
        // mirror half (skip the endpoints already present)
        for g in gens.iter().take(gens.len().saturating_sub(1)) {
            cur -= g * 2.0;
            verts.push(cur.clone());
        }
        Ok(verts)
    }
}

fn combinations(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut num = 1usize;
    for i in 0..k {
        num = num.saturating_mul(n - i) / (i + 1);
    }
    num
}

fn enumerate_combinations(
    n: usize,
    k: usize,
    combo: &mut Vec<usize>,
    depth: usize,
    start: usize,
    f: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        f(combo);
        return;
    }
    for i in start..n {
        combo[depth] = i;
        enumerate_combinations(n, k, combo, depth + 1, i + 1, f);
    }
}

/// Generalized cross product of the selected n-1 generator columns: the
/// cofactor expansion of det([x; g_1; ...; g_{n-1}]).
fn cross_normal(gens: &DMatrix<f64>, sel: &[usize]) -> Option<DVector<f64>> {
    let n = gens.nrows();
    debug_assert_eq!(sel.len(), n - 1);
    if n == 2 {
        let g = gens.column(sel[0]);
        return Some(DVector::from_vec(vec![-g[1], g[0]]));
    }
    let mut normal = DVector::zeros(n);
    // rows of the (n-1) x n matrix M formed by the selected generators
    let mut m = DMatrix::zeros(n - 1, n);
    for (r, &j) in sel.iter().enumerate() {
        m.row_mut(r).copy_from(&gens.column(j).transpose());
    }
    for i in 0..n {
        // delete column i, take determinant, alternate sign
        let sub = m.clone().remove_column(i);
        let det = sub.determinant();
        normal[i] = if i % 2 == 0 { det } else { -det };
    }
    if normal.norm() < 1e-300 {
        None
    } else {
        Some(normal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn support_of_unit_box() {
        let z = Zonotope::origin_box(&dvector![1.0, 1.0]);
        assert!((z.support(&dvector![1.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn support_axis_aligned_with_center() {
        let z = Zonotope::new(dvector![1.0, 1.0], dmatrix![1.0, 0.0; 0.0, 2.0]);
        assert!((z.support(&dvector![0.0, 1.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn support_matches_vertex_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let g = rng.gen_range(1..=8);
            let gens = DMatrix::from_fn(2, g, |_, _| rng.gen_range(-1.0..1.0));
            let c = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let z = Zonotope::new(c.clone(), gens.clone());
            let d = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            // brute force over the 2^g sign patterns
            let mut best = f64::NEG_INFINITY;
            for bits in 0..(1u32 << g) {
                let mut x = c.clone();
                for j in 0..g {
                    let s = if bits >> j & 1 == 1 { 1.0 } else { -1.0 };
                    x += gens.column(j) * s;
                }
                best = best.max(d.dot(&x));
            }
            assert!((z.support(&d) - best).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_map_identity_and_zero() {
        let z = Zonotope::new(dvector![1.0, 2.0], dmatrix![1.0, 0.5; 0.0, 2.0]);
        let id = z.affine_map(&DMatrix::identity(2, 2));
        assert_eq!(id, z);
        let zero = z.affine_map(&DMatrix::zeros(2, 2));
        assert!(zero.support(&dvector![1.0, 1.0]).abs() < 1e-15);
    }

    #[test]
    fn affine_row_map_gives_interval() {
        let z = Zonotope::origin_box(&dvector![1.0, 1.0]);
        let k = dmatrix![-0.5, 0.25];
        let img = z.affine_map(&k);
        let hw = img.support(&dvector![1.0]);
        assert!((hw - 0.75).abs() < 1e-15);
        assert!((img.support(&dvector![-1.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn minkowski_sum_identity_and_intervals() {
        let z = Zonotope::new(dvector![0.5], dmatrix![1.0]);
        let zero = Zonotope::point(&dvector![0.0]);
        let s = z.minkowski_sum(&zero).unwrap();
        assert!((s.support(&dvector![1.0]) - 1.5).abs() < 1e-15);
        let a = Zonotope::origin_box(&dvector![1.0]);
        let b = Zonotope::origin_box(&dvector![2.0]);
        let ab = a.minkowski_sum(&b).unwrap();
        assert!((ab.support(&dvector![1.0]) - 3.0).abs() < 1e-15);
        assert!(a.minkowski_sum(&Zonotope::origin_box(&dvector![1.0, 1.0])).is_err());
    }

    #[test]
    fn scale_examples() {
        let z = Zonotope::origin_box(&dvector![1.0, 1.0]);
        assert_eq!(z.scale(1.0).unwrap(), z);
        let twice = z.scale(2.0).unwrap();
        assert!((twice.support(&dvector![1.0, 0.0]) - 2.0).abs() < 1e-15);
        let origin = z.scale(0.0).unwrap();
        assert!(origin.support(&dvector![1.0, 1.0]).abs() < 1e-15);
        assert!(matches!(z.scale(-0.1), Err(SetError::NegativeScale(_))));
    }

    #[test]
    fn hpoly_conversion_unit_square() {
        let z = Zonotope::origin_box(&dvector![1.0, 1.0]);
        let (p, over) = z.to_hpolytope(16).unwrap();
        assert!(!over);
        assert_eq!(p.num_rows(), 4);
        assert!(p.contains_zonotope(&z, 1e-9));
    }

    #[test]
    fn hpoly_conversion_hexagon() {
        let z = Zonotope::new(dvector![0.0, 0.0], dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, 1.0]);
        let (p, _) = z.to_hpolytope(16).unwrap();
        assert_eq!(p.num_rows(), 6);
        // support agreement in sampled directions via LP over the H-rep
        for i in 0..100 {
            let th = 2.0 * std::f64::consts::PI * (i as f64) / 100.0;
            let d = dvector![th.cos(), th.sin()];
            match p.maximize(&d).unwrap() {
                crate::lp::LpOutcome::Optimal { value, .. } => {
                    assert!((value - z.support(&d)).abs() < 1e-9);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn hpoly_conversion_rotated_parallelotope() {
        let th: f64 = 0.7;
        let rot = dmatrix![th.cos(), -th.sin(); th.sin(), th.cos()];
        let z = Zonotope::origin_box(&dvector![2.0, 0.5]).affine_map(&rot);
        let (p, _) = z.to_hpolytope(16).unwrap();
        assert_eq!(p.num_rows(), 4);
        let verts = p.vertices_2d(1e-9).unwrap();
        assert_eq!(verts.len(), 4);
        let zv = z.vertices_2d().unwrap();
        for v in verts {
            assert!(zv.iter().any(|u| (u - &v).norm() < 1e-9));
        }
    }

    #[test]
    fn degenerate_zonotope_rejected() {
        let z = Zonotope::new(dvector![0.0, 0.0], dmatrix![1.0; 0.0]);
        assert_eq!(z.to_hpolytope(16).unwrap_err(), SetError::DegenerateZonotope);
    }

    #[test]
    fn conversion_is_lossless_both_ways() {
        let z = Zonotope::new(
            dvector![0.1, -0.2],
            dmatrix![0.9, -0.3, 0.2, 0.05; 0.1, 0.8, -0.4, 0.3],
        );
        let (p, over) = z.to_hpolytope(16).unwrap();
        assert!(!over);
        assert!(p.contains_zonotope(&z, 1e-9));
        // reverse: every vertex of the polytope lies in the zonotope's H-rep
        // (same object), so compare supports over a direction fan instead
        for d in direction_grid(2) {
            match p.maximize(&d).unwrap() {
                crate::lp::LpOutcome::Optimal { value, .. } => {
                    assert!((value - z.support(&d)).abs() < 1e-9);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn order_reduction_flags_inflation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let gens = DMatrix::from_fn(2, 24, |_, _| rng.gen_range(-1.0..1.0));
        let z = Zonotope::new(DVector::zeros(2), gens);
        let (red, rel) = z.reduce_generators(12);
        assert_eq!(red.num_generators(), 12);
        assert!(rel > 0.0);
        // over-approximation: support never shrinks
        for d in direction_grid(2) {
            assert!(red.support(&d) >= z.support(&d) - 1e-12);
        }
    }

    #[test]
    fn serde_round_trip() {
        let z = Zonotope::new(dvector![1.0, 2.0], dmatrix![1.0, 0.0; 0.5, 2.0]);
        let s = serde_json::to_string(&z).unwrap();
        assert!(s.contains("\"G\""));
        let back: Zonotope = serde_json::from_str(&s).unwrap();
        assert_eq!(z, back);
    }
}
