//! Dense simplex solver for the small linear programs behind polytope
//! arithmetic (redundancy removal, emptiness, support values) and for QP
//! phase-1 feasibility.
//!
//! Bland's rule is used for both entering and leaving variables, which makes
//! every solve deterministic and cycle-free.

use nalgebra::{DMatrix, DVector};

/// Feasibility tolerance shared by the set-algebra callers.
pub const FEAS_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpError {
    MaxPivots,
}

impl std::fmt::Display for LpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpError::MaxPivots => write!(f, "simplex exceeded the pivot budget"),
        }
    }
}

impl std::error::Error for LpError {}

struct Tableau {
    /// rows x (cols + 1); last column is the rhs
    t: DMatrix<f64>,
    /// basic column per row
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[(i, self.cols)]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.t[(row, col)];
        let ncols = self.cols + 1;
        for j in 0..ncols {
            self.t[(row, j)] /= piv;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let factor = self.t[(i, col)];
            if factor != 0.0 {
                for j in 0..ncols {
                    let v = self.t[(row, j)] * factor;
                    self.t[(i, j)] -= v;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Minimize the objective in `cost` (length cols). Only columns below
    /// `enter_limit` may enter the basis (artificials are kept out). Returns
    /// the objective value at optimum, or None when unbounded.
    fn run(&mut self, cost: &[f64], enter_limit: usize, pivots: &mut usize) -> Result<Option<f64>, LpError> {
        let nrows = self.t.nrows();
        // reduced costs: c_j - c_B B^-1 A_j, computed directly on the tableau
        let mut red = vec![0.0; self.cols + 1];
        for j in 0..=self.cols {
            let mut v = if j < self.cols { cost[j] } else { 0.0 };
            for i in 0..nrows {
                v -= cost[self.basis[i]] * self.t[(i, j)];
            }
            red[j] = v;
        }
        loop {
            // Bland: entering = lowest index with negative reduced cost
            let mut enter = None;
            for (j, rj) in red.iter().enumerate().take(enter_limit) {
                if *rj < -COST_TOL {
                    enter = Some(j);
                    break;
                }
            }
            let Some(enter) = enter else {
                return Ok(Some(-red[self.cols]));
            };
            // ratio test; Bland ties broken by lowest basic-variable index
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..nrows {
                let a = self.t[(i, enter)];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - PIVOT_TOL
                                || ((ratio - lr).abs() <= PIVOT_TOL
                                    && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((leave, _)) = leave else {
                return Ok(None); // unbounded
            };
            self.pivot(leave, enter);
            // update reduced costs by the pivot row
            let factor = red[enter];
            if factor != 0.0 {
                for j in 0..=self.cols {
                    let v = self.t[(leave, j)] * factor;
                    red[j] -= v;
                }
            }
            red[enter] = 0.0;
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(LpError::MaxPivots);
            }
        }
    }

    fn extract(&self, n_free: usize) -> DVector<f64> {
        let mut x = DVector::zeros(n_free);
        for (i, &b) in self.basis.iter().enumerate() {
            if b < n_free {
                x[b] += self.rhs(i);
            } else if b < 2 * n_free {
                x[b - n_free] -= self.rhs(i);
            }
        }
        x
    }
}

/// maximize c.x subject to H x <= h with x free.
///
/// Two-phase simplex on the split form x = x+ - x-; artificial variables are
/// introduced only on rows whose rhs is negative.
pub fn maximize(c: &DVector<f64>, h_mat: &DMatrix<f64>, h_vec: &DVector<f64>) -> Result<LpOutcome, LpError> {
    let n = c.len();
    let q = h_vec.len();
    assert_eq!(h_mat.nrows(), q);
    assert_eq!(h_mat.ncols(), n);
    if q == 0 {
        return Ok(if c.amax() <= COST_TOL {
            LpOutcome::Optimal { x: DVector::zeros(n), value: 0.0 }
        } else {
            LpOutcome::Unbounded
        });
    }

    // columns: x+ (n) | x- (n) | slack (q) | artificials (n_art)
    let neg_rows: Vec<usize> = (0..q).filter(|&i| h_vec[i] < 0.0).collect();
    let n_art = neg_rows.len();
    let cols = 2 * n + q + n_art;
    let mut t = DMatrix::zeros(q, cols + 1);
    let mut basis = vec![0usize; q];
    let mut art_idx = 0;
    for i in 0..q {
        let sign = if h_vec[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * h_mat[(i, j)];
            t[(i, n + j)] = -sign * h_mat[(i, j)];
        }
        t[(i, 2 * n + i)] = sign;
        t[(i, cols)] = sign * h_vec[i];
        if sign < 0.0 {
            t[(i, 2 * n + q + art_idx)] = 1.0;
            basis[i] = 2 * n + q + art_idx;
            art_idx += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }
    let mut tab = Tableau { t, basis, cols };
    let mut pivots = 0usize;

    if n_art > 0 {
        let mut cost = vec![0.0; cols];
        for j in 0..n_art {
            cost[2 * n + q + j] = 1.0;
        }
        let phase1 = tab
            .run(&cost, 2 * n + q, &mut pivots)?
            .expect("phase-1 is bounded below by 0");
        if phase1 > FEAS_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        // pivot any artificial still basic (at zero level) out of the basis;
        // if its whole row is zero the row is redundant and the artificial
        // harmlessly stays basic at zero (it can never re-enter)
        for i in 0..q {
            if tab.basis[i] >= 2 * n + q {
                for j in 0..2 * n + q {
                    if tab.t[(i, j)].abs() > PIVOT_TOL {
                        tab.pivot(i, j);
                        break;
                    }
                }
            }
        }
    }

    // phase 2: minimize -c.(x+ - x-); artificials are excluded from entering
    let mut cost = vec![0.0; cols];
    for j in 0..n {
        cost[j] = -c[j];
        cost[n + j] = c[j];
    }
    match tab.run(&cost, 2 * n + q, &mut pivots)? {
        None => Ok(LpOutcome::Unbounded),
        Some(_) => {
            let x = tab.extract(n);
            let value = c.dot(&x);
            Ok(LpOutcome::Optimal { x, value })
        }
    }
}

/// Find a point minimizing the worst constraint violation of G z <= g.
///
/// Solves min theta s.t. G z - theta <= g, theta >= 0. The theta column
/// provides an immediate basic feasible start, so no artificials are needed;
/// this is the hot path behind QP phase-1.
pub fn feasible_point(g_mat: &DMatrix<f64>, g_vec: &DVector<f64>, tol: f64) -> Result<LpOutcome, LpError> {
    let r = g_vec.len();
    let n = g_mat.ncols();
    if r == 0 {
        return Ok(LpOutcome::Optimal { x: DVector::zeros(n), value: 0.0 });
    }
    // columns: z+ (n) | z- (n) | theta | slack (r)
    let cols = 2 * n + 1 + r;
    let mut t = DMatrix::zeros(r, cols + 1);
    let mut basis = vec![0usize; r];
    for i in 0..r {
        for j in 0..n {
            t[(i, j)] = g_mat[(i, j)];
            t[(i, n + j)] = -g_mat[(i, j)];
        }
        t[(i, 2 * n)] = -1.0;
        t[(i, 2 * n + 1 + i)] = 1.0;
        t[(i, cols)] = g_vec[i];
        basis[i] = 2 * n + 1 + i;
    }
    let mut tab = Tableau { t, basis, cols };
    // if some rhs is negative, pivot theta into the most-negative row; the
    // resulting basis is feasible because that row's rhs is the global min
    let mut imin = 0;
    for i in 1..r {
        if g_vec[i] < g_vec[imin] {
            imin = i;
        }
    }
    if g_vec[imin] < 0.0 {
        tab.pivot(imin, 2 * n);
    }
    let mut cost = vec![0.0; cols];
    cost[2 * n] = 1.0;
    let mut pivots = 0usize;
    let theta = tab
        .run(&cost, cols, &mut pivots)?
        .expect("theta LP is bounded below by 0");
    if theta > tol {
        return Ok(LpOutcome::Infeasible);
    }
    Ok(LpOutcome::Optimal { x: tab.extract(n), value: theta })
}
