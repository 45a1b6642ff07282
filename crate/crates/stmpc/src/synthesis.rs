//! LQR synthesis: discrete-time Riccati fixed point, feedback gain, closed
//! loop matrix and the terminal cost from the discrete Lyapunov equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisError {
    BadDimensions(String),
    NotSymmetric(String),
    NotPsd { matrix: &'static str, min_eig: f64 },
    NotPd { matrix: &'static str, min_eig: f64 },
    NonConvergent { what: &'static str, residual: f64, iterations: usize },
    Unstable { rho: f64 },
}

impl std::fmt::Display for SynthesisError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SynthesisError::BadDimensions(s) => write!(f, "bad dimensions: {s}"),
            SynthesisError::NotSymmetric(s) => write!(f, "matrix not symmetric: {s}"),
            SynthesisError::NotPsd { matrix, min_eig } => {
                write!(f, "{matrix} is not positive semidefinite (min eigenvalue {min_eig:e})")
            }
            SynthesisError::NotPd { matrix, min_eig } => {
                write!(f, "{matrix} is not positive definite (min eigenvalue {min_eig:e})")
            }
            SynthesisError::NonConvergent { what, residual, iterations } => {
                write!(f, "{what} failed to converge after {iterations} iterations (residual {residual:e})")
            }
            SynthesisError::Unstable { rho } => {
                write!(f, "closed loop is not stable (spectral radius {rho})")
            }
        }
    }
}

impl std::error::Error for SynthesisError {}

/// Linear plant x+ = A x + B u + w with zero-mean disturbance of covariance W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self, SynthesisError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SynthesisError::BadDimensions(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(SynthesisError::BadDimensions(format!(
                "B has {} rows but A is {n}x{n}",
                b.nrows()
            )));
        }
        if w.nrows() != n || w.ncols() != n {
            return Err(SynthesisError::BadDimensions(format!("W is {}x{}", w.nrows(), w.ncols())));
        }
        check_symmetric(&w, "W")?;
        let min_eig = min_eigenvalue(&w);
        if min_eig < -1e-12 {
            return Err(SynthesisError::NotPsd { matrix: "W", min_eig });
        }
        Ok(Self { a, b, w })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }
}

/// Stage cost weights l(s,v) = |s|_Q^2 + |v|_R^2, both positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, SynthesisError> {
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        let q_min = min_eigenvalue(&q);
        if q_min <= 0.0 {
            return Err(SynthesisError::NotPd { matrix: "Q", min_eig: q_min });
        }
        let r_min = min_eigenvalue(&r);
        if r_min <= 0.0 {
            return Err(SynthesisError::NotPd { matrix: "R", min_eig: r_min });
        }
        Ok(Self { q, r })
    }
}

/// Result of the LQR design: gain, closed loop, terminal cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    /// feedback gain with the minus sign absorbed: u = K x is stabilizing
    pub k: DMatrix<f64>,
    pub a_cl: DMatrix<f64>,
    /// terminal cost matrix from the Lyapunov equation
    pub p: DMatrix<f64>,
    pub rho: f64,
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<(), SynthesisError> {
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 {
        return Err(SynthesisError::NotSymmetric(format!("{name} (asymmetry {asym:e})")));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn riccati_map(
    s: &DMatrix<f64>,
    sys: &SystemModel,
    w: &CostWeights,
) -> Result<DMatrix<f64>, SynthesisError> {
    let bt_s = sys.b.transpose() * s;
    let gram = &w.r + &bt_s * &sys.b;
    let chol = gram.clone().cholesky().ok_or(SynthesisError::NonConvergent {
        what: "DARE iteration (R + B'SB not positive definite)",
        residual: f64::NAN,
        iterations: 0,
    })?;
    let bt_s_a = &bt_s * &sys.a;
    let gain = chol.solve(&bt_s_a);
    Ok(symmetrize(
        &(sys.a.transpose() * s * &sys.a - bt_s_a.transpose() * gain + &w.q),
    ))
}

/// Fixed-point iteration for the discrete algebraic Riccati equation,
/// started from S0 = Q and symmetrized each step to suppress drift.
pub fn solve_dare(
    sys: &SystemModel,
    w: &CostWeights,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>, SynthesisError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut s = w.q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = riccati_map(&s, sys, w)?;
        residual = (&next - &s).amax();
        s = next;
        if residual <= tol {
            return Ok(s);
        }
    }
    Err(SynthesisError::NonConvergent { what: "DARE", residual, iterations: max_iter })
}

/// LQR gain and terminal ingredients from the DARE solution.
pub fn lqr_gain(sys: &SystemModel, w: &CostWeights) -> Result<Synthesis, SynthesisError> {
    let s = solve_dare(sys, w, 1e-12, 10_000)?;
    let gram = &w.r + sys.b.transpose() * &s * &sys.b;
    let chol = gram.clone().cholesky().ok_or(SynthesisError::NonConvergent {
        what: "gain solve (R + B'SB not positive definite)",
        residual: f64::NAN,
        iterations: 0,
    })?;
    let k = -chol.solve(&(sys.b.transpose() * &s * &sys.a));
    let a_cl = &sys.a + &sys.b * &k;
    let rho = spectral_radius(&a_cl);
    if rho >= 1.0 {
        return Err(SynthesisError::Unstable { rho });
    }
    let m = &w.q + k.transpose() * &w.r * &k;
    let p = solve_discrete_lyapunov(&a_cl, &m, 1e-14)?;
    let residual = (a_cl.transpose() * &p * &a_cl - &p + &m).amax();
    if residual > 1e-8 {
        return Err(SynthesisError::NonConvergent {
            what: "Lyapunov residual check",
            residual,
            iterations: 0,
        });
    }
    Ok(Synthesis { k, a_cl, p, rho })
}

/// P = sum_i (A_cl^T)^i M A_cl^i by doubling: P <- P + T' P T, T <- T^2.
pub fn solve_discrete_lyapunov(
    a_cl: &DMatrix<f64>,
    m: &DMatrix<f64>,
    tol: f64,
) -> Result<DMatrix<f64>, SynthesisError> {
    let mut p = symmetrize(m);
    let mut t = a_cl.clone();
    let mut increment = f64::INFINITY;
    for _ in 0..200 {
        let inc = t.transpose() * &p * &t;
        increment = inc.amax();
        p = symmetrize(&(&p + inc));
        if increment <= tol {
            return Ok(p);
        }
        t = &t * &t;
    }
    Err(SynthesisError::NonConvergent { what: "discrete Lyapunov", residual: increment, iterations: 200 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};

    fn scalar_sys() -> (SystemModel, CostWeights) {
        (
            SystemModel::new(dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap(),
            CostWeights::new(dmatrix![1.0], dmatrix![1.0]).unwrap(),
        )
    }

    /// The paper's example plant.
    pub(crate) fn paper_sys() -> (SystemModel, CostWeights) {
        (
            SystemModel::new(
                dmatrix![1.0, 0.0075; -0.143, 0.996],
                dmatrix![4.798; 0.115],
                dmatrix![0.0016, 0.0; 0.0, 0.0016],
            )
            .unwrap(),
            CostWeights::new(dmatrix![1.0, 0.0; 0.0, 10.0], dmatrix![1.0]).unwrap(),
        )
    }

    #[test]
    fn scalar_dare_matches_quadratic_formula() {
        let (sys, w) = scalar_sys();
        let s = solve_dare(&sys, &w, 1e-12, 10_000).unwrap();
        // scalar DARE with A=B=Q=R=1: S = (1 + sqrt(5)) / 2
        let golden = 1.618033988749894848;
        assert!((s[(0, 0)] - golden).abs() < 1e-10);
        let syn = lqr_gain(&sys, &w).unwrap();
        assert!((syn.k[(0, 0)] + golden / (1.0 + golden)).abs() < 1e-9);
        assert!((syn.a_cl[(0, 0)] - (1.0 - golden / (1.0 + golden))).abs() < 1e-9);
    }

    #[test]
    fn zero_dynamics_gives_s_equals_q() {
        let sys = SystemModel::new(
            DMatrix::zeros(2, 2),
            dmatrix![1.0; 0.5],
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let w = CostWeights::new(dmatrix![2.0, 0.0; 0.0, 3.0], dmatrix![1.0]).unwrap();
        let s = solve_dare(&sys, &w, 1e-12, 100).unwrap();
        assert!((&s - &w.q).amax() < 1e-12);
        let syn = lqr_gain(&sys, &w).unwrap();
        assert!(syn.k.amax() < 1e-12);
        assert!(syn.a_cl.amax() < 1e-12);
        assert!((&syn.p - &w.q).amax() < 1e-10);
    }

    #[test]
    fn paper_system_regression() {
        let (sys, w) = paper_sys();
        let s = solve_dare(&sys, &w, 1e-12, 10_000).unwrap();
        // frozen from a 50-digit fixed-point iteration
        let expect = dmatrix![
            1.907408068509424858, -5.0562182307258481891;
            -5.0562182307258481891, 39.544793780882252061
        ];
        assert!((&s - &expect).amax() < 1e-9);
        // DARE residual
        let resid = (riccati_map(&s, &sys, &w).unwrap() - &s).amax();
        assert!(resid <= 1e-10, "residual {resid:e}");
        // PSD and symmetric
        assert!((&s - s.transpose()).amax() < 1e-10);
        assert!(min_eigenvalue(&s) > 0.0);

        let syn = lqr_gain(&sys, &w).unwrap();
        assert!((syn.k[(0, 0)] - -0.28577569425351823617).abs() < 1e-9);
        assert!((syn.k[(0, 1)] - 0.49102469232360095313).abs() < 1e-9);
        assert!(syn.rho < 1.0);
        let m = &w.q + syn.k.transpose() * &w.r * &syn.k;
        let lyap_resid = (syn.a_cl.transpose() * &syn.p * &syn.a_cl - &syn.p + &m).amax();
        assert!(lyap_resid <= 1e-8, "lyapunov residual {lyap_resid:e}");
    }

    #[test]
    fn lyapunov_scalar_geometric_series() {
        let p = solve_discrete_lyapunov(&dmatrix![0.5], &dmatrix![1.0], 1e-14).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        let p0 = solve_discrete_lyapunov(&DMatrix::zeros(2, 2), &dmatrix![1.0, 0.0; 0.0, 2.0], 1e-14)
            .unwrap();
        assert!((p0 - dmatrix![1.0, 0.0; 0.0, 2.0]).amax() < 1e-15);
    }

    #[test]
    fn terminal_cost_identity_on_random_states() {
        let (sys, w) = paper_sys();
        let syn = lqr_gain(&sys, &w).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
            let vf = |v: &DVector<f64>| (v.transpose() * &syn.p * v)[(0, 0)];
            let u = &syn.k * &x;
            let stage = (x.transpose() * &w.q * &x)[(0, 0)] + (u.transpose() * &w.r * &u)[(0, 0)];
            let lhs = vf(&(&syn.a_cl * &x)) + stage - vf(&x);
            assert!(lhs.abs() <= 1e-6, "A2 identity violated by {lhs:e}");
        }
    }

    #[test]
    fn deterministic_bitwise() {
        let (sys, w) = paper_sys();
        let a = lqr_gain(&sys, &w).unwrap();
        let b = lqr_gain(&sys, &w).unwrap();
        assert_eq!(a.k, b.k);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn rejects_indefinite_weights() {
        let q = dmatrix![1.0, 0.0; 0.0, -0.1];
        assert!(matches!(
            CostWeights::new(q, dmatrix![1.0]),
            Err(SynthesisError::NotPd { matrix: "Q", .. })
        ));
    }

    #[test]
    fn unstabilizable_pair_reported() {
        // A = 2 (unstable), B = 0: no gain can stabilize; DARE diverges
        let sys = SystemModel::new(dmatrix![2.0], dmatrix![0.0], dmatrix![0.0]).unwrap();
        let w = CostWeights::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert!(matches!(
            solve_dare(&sys, &w, 1e-12, 200),
            Err(SynthesisError::NonConvergent { .. })
        ));
    }

    #[test]
    fn step_applies_dynamics() {
        let (sys, _) = paper_sys();
        let x = dvector![1.0, 2.0];
        let u = dvector![0.1];
        let w = dvector![0.01, -0.01];
        let next = sys.step(&x, &u, &w);
        assert!((next[0] - (1.0 + 0.015 + 0.4798 + 0.01)).abs() < 1e-12);
    }
}
