//! Probabilistic reachable sets: the disturbance confidence region, the
//! propagated error covariances, the relaxed PRS sequence D_k and the mRPI
//! outer approximation Z that caps it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gauss::{quantile_std_normal, QuantileError};
use crate::sets::{HPolytope, SetError, Zonotope};
use crate::synthesis::Synthesis;

#[derive(Debug, Clone, PartialEq)]
pub enum PrsError {
    NonPsd { min_eig: f64 },
    OutOfRange,
    NoConvergence { what: &'static str, cap: usize, rho: f64 },
    RpiCheckFailed { margin: f64 },
    Set(SetError),
}

impl std::fmt::Display for PrsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrsError::NonPsd { min_eig } => {
                write!(f, "covariance is not positive semidefinite (min eigenvalue {min_eig:e})")
            }
            PrsError::OutOfRange => write!(f, "probability out of range"),
            PrsError::NoConvergence { what, cap, rho } => {
                write!(f, "{what} did not converge within {cap} steps (spectral radius {rho})")
            }
            PrsError::RpiCheckFailed { margin } => {
                write!(f, "robust invariance check failed with margin {margin:e}")
            }
            PrsError::Set(e) => write!(f, "set operation failed: {e}"),
        }
    }
}

impl std::error::Error for PrsError {}

impl From<SetError> for PrsError {
    fn from(e: SetError) -> Self {
        PrsError::Set(e)
    }
}

impl From<QuantileError> for PrsError {
    fn from(_: QuantileError) -> Self {
        PrsError::OutOfRange
    }
}

/// How the per-axis quantile is read off the violation budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum QuantileConvention {
    /// alpha = PhiInv(1 - eps), as the source equations state it
    #[default]
    #[serde(rename = "paper-literal")]
    PaperLiteral,
    /// alpha = PhiInv(1 - eps/2)
    #[serde(rename = "two-sided")]
    TwoSided,
    /// alpha = PhiInv(1 - eps/(2n)), joint coverage by union bound
    #[serde(rename = "bonferroni")]
    Bonferroni,
}

/// Violation budget and quantile convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceSpec {
    pub epsilon: f64,
    #[serde(default)]
    pub convention: QuantileConvention,
}

impl ChanceSpec {
    pub fn new(epsilon: f64, convention: QuantileConvention) -> Result<Self, PrsError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(PrsError::OutOfRange);
        }
        Ok(Self { epsilon, convention })
    }

    /// Quantile for a system of the given state dimension.
    pub fn alpha(&self, dim: usize) -> Result<f64, PrsError> {
        let p = match self.convention {
            QuantileConvention::PaperLiteral => 1.0 - self.epsilon,
            QuantileConvention::TwoSided => 1.0 - self.epsilon / 2.0,
            QuantileConvention::Bonferroni => 1.0 - self.epsilon / (2.0 * dim as f64),
        };
        Ok(quantile_std_normal(p)?)
    }
}

/// Axis-aligned confidence box: half-width alpha * sqrt(W_ii) per axis.
pub fn gaussian_confidence_box(w: &DMatrix<f64>, alpha: f64) -> Result<Zonotope, PrsError> {
    let sym = (w + w.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig < -1e-12 {
        return Err(PrsError::NonPsd { min_eig });
    }
    let hw = DVector::from_fn(w.nrows(), |i, _| alpha * w[(i, i)].max(0.0).sqrt());
    Ok(Zonotope::origin_box(&hw))
}

/// Sigma_0 = W, Sigma_{k+1} = A_cl Sigma_k A_cl' + W, for k = 0..=kmax.
pub fn propagate_covariance(a_cl: &DMatrix<f64>, w: &DMatrix<f64>, kmax: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(kmax + 1);
    let mut sigma = (w + w.transpose()) * 0.5;
    out.push(sigma.clone());
    for _ in 0..kmax {
        sigma = a_cl * &sigma * a_cl.transpose() + w;
        sigma = (&sigma + sigma.transpose()) * 0.5;
        out.push(sigma.clone());
    }
    out
}

/// Relaxed PRS recursion D_0 = Ew, D_{k+1} = A_cl D_k + Ew; stops at the
/// first k where the support change over `dirs` falls below `conv_tol`.
/// Returns (D_0..D_kmax, kmax).
pub fn build_relaxed_prs(
    a_cl: &DMatrix<f64>,
    ew: &Zonotope,
    dirs: &[DVector<f64>],
    conv_tol: f64,
    kcap: usize,
) -> Result<(Vec<Zonotope>, usize), PrsError> {
    let mut sets = vec![ew.clone()];
    for k in 0..kcap {
        let next = sets[k].affine_map(a_cl).minkowski_sum(ew)?;
        let change = dirs
            .iter()
            .map(|d| (next.support(d) - sets[k].support(d)).abs())
            .fold(0.0, f64::max);
        if change <= conv_tol {
            return Ok((sets, k));
        }
        sets.push(next);
    }
    Err(PrsError::NoConvergence {
        what: "relaxed PRS",
        cap: kcap,
        rho: crate::synthesis::spectral_radius(a_cl),
    })
}

#[derive(Debug, Clone)]
pub struct MrpiResult {
    pub z: Zonotope,
    /// number of terms in the truncated power sum
    pub s: usize,
    /// contraction ratio at termination
    pub alpha: f64,
}

/// Outer approximation of the minimal RPI set by the truncated power sum
/// inflated by 1/(1 - alpha(s)), with s the smallest exponent for which
/// A_cl^s Ew fits in eps_approx * Ew facet-wise.
pub fn mrpi_outer_approx(
    a_cl: &DMatrix<f64>,
    ew: &Zonotope,
    eps_approx: f64,
    cap: usize,
    g_max: usize,
) -> Result<MrpiResult, PrsError> {
    // a zero disturbance set has {0} as its minimal invariant set
    let grid = crate::sets::direction_grid(ew.dim());
    if grid.iter().all(|d| ew.support(d).abs() < 1e-15) {
        return Ok(MrpiResult { z: Zonotope::point(&DVector::zeros(ew.dim())), s: 1, alpha: 0.0 });
    }
    let (ew_hrep, _) = ew.to_hpolytope(g_max)?;
    let mut a_pow = a_cl.clone(); // A_cl^s
    for s in 1..=cap {
        let image = ew.affine_map(&a_pow);
        let mut alpha = 0.0f64;
        for i in 0..ew_hrep.num_rows() {
            let ratio = image.support(&ew_hrep.row(i)) / ew_hrep.offsets()[i];
            alpha = alpha.max(ratio);
        }
        if alpha <= eps_approx {
            // sum_{i=0}^{s-1} A_cl^i Ew, then inflate
            let mut z = ew.clone();
            let mut term = ew.clone();
            for _ in 1..s {
                term = term.affine_map(a_cl);
                z = z.minkowski_sum(&term)?;
            }
            let z = z.scale(1.0 / (1.0 - alpha)).expect("positive scale");
            // invariance check: A_cl Z + Ew inside Z, via Z's own facets
            let (z_hrep, _) = z.to_hpolytope(g_max)?;
            let moved = z.affine_map(a_cl).minkowski_sum(ew)?;
            let mut margin = f64::INFINITY;
            for i in 0..z_hrep.num_rows() {
                margin = margin.min(z_hrep.offsets()[i] - moved.support(&z_hrep.row(i)));
            }
            if margin < -1e-8 {
                return Err(PrsError::RpiCheckFailed { margin });
            }
            return Ok(MrpiResult { z, s, alpha });
        }
        a_pow = a_cl * &a_pow;
    }
    Err(PrsError::NoConvergence {
        what: "mRPI outer approximation",
        cap,
        rho: crate::synthesis::spectral_radius(a_cl),
    })
}

/// Everything the constraint tightening and the controllers need about the
/// disturbance tubes, built once offline and immutable afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeSchedule {
    pub ew: Zonotope,
    /// error covariances Sigma_0..Sigma_kmax
    pub sigma: Vec<DMatrix<f64>>,
    /// relaxed PRS D_0..D_kmax
    pub d_sets: Vec<Zonotope>,
    /// input-space images K D_k
    pub kd_sets: Vec<Zonotope>,
    /// mRPI outer approximation
    pub z_set: Zonotope,
    pub kz_set: Zonotope,
    pub kmax: usize,
    pub mrpi_s: usize,
    pub mrpi_alpha: f64,
    /// quantile actually used
    pub alpha: f64,
}

impl TubeSchedule {
    /// D_min(k, kmax) — the schedule saturates once converged.
    pub fn d_at(&self, k: usize) -> &Zonotope {
        &self.d_sets[k.min(self.kmax)]
    }

    pub fn kd_at(&self, k: usize) -> &Zonotope {
        &self.kd_sets[k.min(self.kmax)]
    }
}

/// Tolerances for the offline tube construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TubeTolerances {
    /// support-change threshold that freezes the D_k recursion
    pub d_conv_tol: f64,
    /// contraction target for the mRPI (alpha(s) <= mrpi_eps)
    pub mrpi_eps: f64,
    /// cap on both iterations
    pub kcap: usize,
    /// generator budget for halfspace conversions
    pub g_max: usize,
}

impl Default for TubeTolerances {
    fn default() -> Self {
        Self { d_conv_tol: 1e-6, mrpi_eps: 0.01, kcap: 1000, g_max: 16 }
    }
}

/// Offline construction of the complete schedule. Convergence of the D_k
/// recursion is measured in the facet normals of the state constraint set
/// and the +-K rows, the only directions downstream tightening reads.
pub fn build_tube_schedule(
    w: &DMatrix<f64>,
    syn: &Synthesis,
    chance: &ChanceSpec,
    x_set: &HPolytope,
    tol: &TubeTolerances,
) -> Result<TubeSchedule, PrsError> {
    let n = w.nrows();
    let alpha = chance.alpha(n)?;
    let ew = gaussian_confidence_box(w, alpha)?;

    let mut dirs: Vec<DVector<f64>> = (0..x_set.num_rows()).map(|i| x_set.row(i)).collect();
    for i in 0..syn.k.nrows() {
        let row = syn.k.row(i).transpose();
        let norm = row.norm();
        if norm > 1e-14 {
            dirs.push(&row / norm);
            dirs.push(-&row / norm);
        }
    }

    let (d_sets, kmax) = build_relaxed_prs(&syn.a_cl, &ew, &dirs, tol.d_conv_tol, tol.kcap)?;
    let sigma = propagate_covariance(&syn.a_cl, w, kmax);
    let mrpi = mrpi_outer_approx(&syn.a_cl, &ew, tol.mrpi_eps, tol.kcap, tol.g_max)?;
    let kd_sets: Vec<Zonotope> = d_sets.iter().map(|d| d.affine_map(&syn.k)).collect();
    let kz_set = mrpi.z.affine_map(&syn.k);
    Ok(TubeSchedule {
        ew,
        sigma,
        d_sets,
        kd_sets,
        z_set: mrpi.z,
        kz_set,
        kmax,
        mrpi_s: mrpi.s,
        mrpi_alpha: mrpi.alpha,
        alpha,
    })
}
