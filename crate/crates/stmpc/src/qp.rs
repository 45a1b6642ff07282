//! Dense strictly convex QP solver: primal active set with lowest-index
//! tie-breaking everywhere, so solves are bit-reproducible. Feasible starts
//! come from a warm-start candidate when the caller has one, otherwise from
//! the phase-1 LP.

use nalgebra::{DMatrix, DVector};

use crate::lp::{self, LpError, LpOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// quadratic term of 0.5 z'Pz + q'z, positive definite
    pub p_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    /// inequality rows G z <= g
    pub g_mat: DMatrix<f64>,
    pub g_vec: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// multipliers, zero on inactive rows
    pub mu: DVector<f64>,
    /// 0.5 z'Pz + q'z at the solution
    pub value: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn worst(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal(QpSolution),
    /// no point satisfies the constraints; carries the phase-1 violation
    Infeasible { max_violation: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    MaxIterations,
    NotPositiveDefinite,
    Lp(LpError),
}

impl std::fmt::Display for QpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QpError::MaxIterations => write!(f, "active-set iteration cap exceeded"),
            QpError::NotPositiveDefinite => write!(f, "quadratic term is not positive definite"),
            QpError::Lp(e) => write!(f, "phase-1 LP failed: {e}"),
        }
    }
}

impl std::error::Error for QpError {}

impl From<LpError> for QpError {
    fn from(e: LpError) -> Self {
        QpError::Lp(e)
    }
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.p_mat.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.g_vec.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.p_mat * z)[(0, 0)] + self.q_vec.dot(z)
    }

    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        if self.num_constraints() == 0 {
            return 0.0;
        }
        let vals = &self.g_mat * z - &self.g_vec;
        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0)
    }

    fn residuals(&self, z: &DVector<f64>, mu: &DVector<f64>) -> KktResiduals {
        let stat = (&self.p_mat * z + &self.q_vec + self.g_mat.transpose() * mu).amax();
        let primal = self.max_violation(z);
        let slacks = &self.g_mat * z - &self.g_vec;
        let mut comp = 0.0f64;
        let mut dual = 0.0f64;
        for i in 0..self.num_constraints() {
            comp = comp.max((mu[i] * slacks[i]).abs());
            dual = dual.max(-mu[i]);
        }
        KktResiduals { stationarity: stat, primal, complementarity: comp, dual: dual.max(0.0) }
    }
}

/// Solve the equality-constrained subproblem for the working set: the KKT
/// system [[P, Gw'], [Gw, 0]] [z; mu] = [-q; gw].
fn solve_eqp(p: &QpProblem, working: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = p.dim();
    let w = working.len();
    let mut kkt = DMatrix::zeros(d + w, d + w);
    kkt.view_mut((0, 0), (d, d)).copy_from(&p.p_mat);
    for (r, &i) in working.iter().enumerate() {
        for j in 0..d {
            kkt[(d + r, j)] = p.g_mat[(i, j)];
            kkt[(j, d + r)] = p.g_mat[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(d + w);
    for j in 0..d {
        rhs[j] = -p.q_vec[j];
    }
    for (r, &i) in working.iter().enumerate() {
        rhs[d + r] = p.g_vec[i];
    }
    let lu = kkt.clone().full_piv_lu();
    if let Some(sol) = lu.solve(&rhs) {
        let resid = (&kkt * &sol - &rhs).amax();
        if resid <= 1e-7 {
            return Some((sol.rows(0, d).into_owned(), sol.rows(d, w).into_owned()));
        }
    }
    // dependent working set: fall back to the deterministic minimum-norm
    // least-squares solution
    let svd = kkt.svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    Some((sol.rows(0, d).into_owned(), sol.rows(d, w).into_owned()))
}

/// Primal active-set method for strictly convex QPs.
///
/// KKT conditions at `tol`: stationarity, primal feasibility, complementary
/// slackness and dual feasibility all within `tol`. `warm` is used as the
/// starting point when it is feasible.
pub fn solve_qp(
    p: &QpProblem,
    tol: f64,
    warm: Option<&DVector<f64>>,
) -> Result<QpOutcome, QpError> {
    let d = p.dim();
    let r = p.num_constraints();
    let feas_tol = lp::FEAS_TOL;

    if r == 0 {
        let chol = p.p_mat.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let z = chol.solve(&(-&p.q_vec));
        let mu = DVector::zeros(0);
        let residuals = p.residuals(&z, &mu);
        let value = p.objective(&z);
        return Ok(QpOutcome::Optimal(QpSolution { z, mu, value, iterations: 0, residuals }));
    }

    let mut z = match warm {
        Some(w0) if p.max_violation(w0) <= feas_tol => w0.clone(),
        _ => match lp::feasible_point(&p.g_mat, &p.g_vec, feas_tol)? {
            LpOutcome::Optimal { x, .. } => x,
            LpOutcome::Infeasible => {
                // measure how badly the best point misses
                let theta = match lp::feasible_point(&p.g_mat, &p.g_vec, f64::INFINITY)? {
                    LpOutcome::Optimal { value, .. } => value,
                    _ => f64::INFINITY,
                };
                return Ok(QpOutcome::Infeasible { max_violation: theta });
            }
            LpOutcome::Unbounded => unreachable!("theta LP is bounded"),
        },
    };

    let mut working: Vec<usize> = Vec::new();
    let iter_cap = 50 * (r + d + 1);
    for iteration in 1..=iter_cap {
        let Some((z_eq, mu_w)) = solve_eqp(p, &working) else {
            return Err(QpError::MaxIterations);
        };
        let step = &z_eq - &z;
        if step.amax() <= 1e-11 * z.amax().max(1.0) {
            // stationary on the working set: check multipliers
            let mut drop_idx = None;
            for (pos, _) in working.iter().enumerate() {
                if mu_w[pos] < -tol.max(1e-11) {
                    drop_idx = Some(pos);
                    break; // lowest constraint index first (working is sorted)
                }
            }
            match drop_idx {
                None => {
                    let mut mu = DVector::zeros(r);
                    for (pos, &i) in working.iter().enumerate() {
                        mu[i] = mu_w[pos].max(0.0);
                    }
                    let residuals = p.residuals(&z_eq, &mu);
                    let value = p.objective(&z_eq);
                    return Ok(QpOutcome::Optimal(QpSolution {
                        z: z_eq,
                        mu,
                        value,
                        iterations: iteration,
                        residuals,
                    }));
                }
                Some(pos) => {
                    working.remove(pos);
                    continue;
                }
            }
        }
        // ratio test toward z_eq over rows outside the working set
        let gz = &p.g_mat * &z;
        let gstep = &p.g_mat * &step;
        let mut alpha = 1.0f64;
        let mut blocker = None;
        for i in 0..r {
            if working.binary_search(&i).is_ok() {
                continue;
            }
            if gstep[i] > 1e-12 {
                let slack = (p.g_vec[i] - gz[i]).max(0.0);
                let ratio = slack / gstep[i];
                if ratio < alpha - 1e-12 {
                    alpha = ratio;
                    blocker = Some(i);
                }
            }
        }
        match blocker {
            None => {
                z = z_eq;
            }
            Some(b) => {
                z += step * alpha;
                let pos = working.binary_search(&b).unwrap_err();
                working.insert(pos, b);
            }
        }
    }
    Err(QpError::MaxIterations)
}
