//! Constraint tightening: the time-varying families (C~_k, V~_k), the
//! constant pair (Cbar, Vbar), the terminal set as a maximal output
//! admissible set, and the terminal-ingredient axiom checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lp::LpOutcome;
use crate::prs::TubeSchedule;
use crate::sets::{HPolytope, SetError, Zonotope};
use crate::synthesis::{CostWeights, Synthesis};

#[derive(Debug, Clone, PartialEq)]
pub enum TighteningError {
    /// A tightened set came out empty: the tube outgrew the constraint set.
    EmptyTightening { which: String, facet: usize, offset: f64 },
    NoFiniteDetermination { iter_cap: usize },
    Set(SetError),
}

impl std::fmt::Display for TighteningError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TighteningError::EmptyTightening { which, facet, offset } => write!(
                f,
                "{which} tightened to empty: facet {facet} has offset {offset:.6} after subtraction"
            ),
            TighteningError::NoFiniteDetermination { iter_cap } => {
                write!(f, "output admissible set not finitely determined within {iter_cap} steps")
            }
            TighteningError::Set(e) => write!(f, "set operation failed: {e}"),
        }
    }
}

impl std::error::Error for TighteningError {}

impl From<SetError> for TighteningError {
    fn from(e: SetError) -> Self {
        TighteningError::Set(e)
    }
}

/// All tightened constraint sets plus the halfspace forms of the initial
/// tube cross-sections the controllers impose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightenedSchedule {
    /// time-varying state sets C~_0..C~_kmax
    pub ct: Vec<HPolytope>,
    /// time-varying input sets V~_0..V~_kmax
    pub vt: Vec<HPolytope>,
    /// constant state set X (-) Z
    pub cbar: HPolytope,
    /// constant input set U (-) KZ
    pub vbar: HPolytope,
    /// terminal set (maximal output admissible set for the limit pair)
    pub xf: HPolytope,
    /// halfspace form of each D_k, for the initial constraint
    pub d_hreps: Vec<HPolytope>,
    /// halfspace form of Z
    pub z_hrep: HPolytope,
    /// any halfspace conversion had to merge generators (over-approximation)
    pub over_approximated: bool,
}

impl TightenedSchedule {
    pub fn ct_at(&self, k: usize) -> &HPolytope {
        &self.ct[k.min(self.ct.len() - 1)]
    }

    pub fn vt_at(&self, k: usize) -> &HPolytope {
        &self.vt[k.min(self.vt.len() - 1)]
    }

    pub fn d_hrep_at(&self, k: usize) -> &HPolytope {
        &self.d_hreps[k.min(self.d_hreps.len() - 1)]
    }
}

fn tighten(
    base: &HPolytope,
    tube: &Zonotope,
    which: &str,
    set_tol: f64,
) -> Result<HPolytope, TighteningError> {
    let raw = base.pontryagin_diff(tube).map_err(TighteningError::Set)?;
    if raw.is_empty(set_tol).map_err(TighteningError::Set)? {
        let (facet, offset) = (0..raw.num_rows())
            .map(|i| (i, raw.offsets()[i]))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("nonempty row set");
        return Err(TighteningError::EmptyTightening { which: which.to_string(), facet, offset });
    }
    raw.reduce(set_tol).map_err(TighteningError::Set)
}

/// C~_k = X (-) D_k, V~_k = U (-) K D_k per step, Cbar = X (-) Z,
/// Vbar = U (-) KZ, and the terminal set for the limit pair. All results
/// reduced; emptiness aborts loudly naming the binding facet.
pub fn build_tightened_schedule(
    x_set: &HPolytope,
    u_set: &HPolytope,
    tubes: &TubeSchedule,
    syn: &Synthesis,
    set_tol: f64,
    g_max: usize,
    moas_cap: usize,
) -> Result<TightenedSchedule, TighteningError> {
    let mut ct = Vec::with_capacity(tubes.d_sets.len());
    let mut vt = Vec::with_capacity(tubes.d_sets.len());
    for (k, d) in tubes.d_sets.iter().enumerate() {
        ct.push(tighten(x_set, d, &format!("state constraint at step {k}"), set_tol)?);
        vt.push(tighten(u_set, &tubes.kd_sets[k], &format!("input constraint at step {k}"), set_tol)?);
    }
    let cbar = tighten(x_set, &tubes.z_set, "constant state constraint", set_tol)?;
    let vbar = tighten(u_set, &tubes.kz_set, "constant input constraint", set_tol)?;
    let xf = max_output_admissible_set(&syn.a_cl, &cbar, &vbar, &syn.k, moas_cap)?;

    let mut over_approximated = false;
    let mut d_hreps = Vec::with_capacity(tubes.d_sets.len());
    for d in &tubes.d_sets {
        let (h, over) = init_set_hrep(d, g_max)?;
        over_approximated |= over;
        d_hreps.push(h);
    }
    let (z_hrep, over) = init_set_hrep(&tubes.z_set, g_max)?;
    over_approximated |= over;

    Ok(TightenedSchedule { ct, vt, cbar, vbar, xf, d_hreps, z_hrep, over_approximated })
}

/// Halfspace form of an initial tube cross-section. A tube that has
/// collapsed to a point (zero disturbance) gets an empty-row marker: the
/// controller switches to an equality in that case.
fn init_set_hrep(d: &Zonotope, g_max: usize) -> Result<(HPolytope, bool), TighteningError> {
    let grid = crate::sets::direction_grid(d.dim());
    if grid.iter().all(|dir| d.radius(dir) < 1e-15) {
        // point set: represented by zero facets; callers special-case it
        return Ok((HPolytope::new(DMatrix::zeros(0, d.dim()), DVector::zeros(0)), false));
    }
    Ok(d.to_hpolytope(g_max)?)
}

/// Gilbert–Tan iteration: O_t = {s : A_cl^j s in Cs, K A_cl^j s in Vs,
/// j = 0..t}, stopping at the first t with O_{t+1} = O_t. The returned set
/// is reduced and satisfies the terminal-set axioms by construction.
pub fn max_output_admissible_set(
    a_cl: &DMatrix<f64>,
    cs: &HPolytope,
    vs: &HPolytope,
    k: &DMatrix<f64>,
    iter_cap: usize,
) -> Result<HPolytope, TighteningError> {
    let tol = 1e-9;
    let mut a_pow = DMatrix::identity(a_cl.nrows(), a_cl.ncols());
    let mut current = cs.preimage(&a_pow).intersect(&vs.preimage(&(k * &a_pow)));
    for _ in 0..iter_cap {
        a_pow = &a_pow * a_cl;
        let fresh = cs.preimage(&a_pow).intersect(&vs.preimage(&(k * &a_pow)));
        // O_{t+1} = O_t iff every fresh row is redundant for the current set
        let mut all_redundant = true;
        for i in 0..fresh.num_rows() {
            let row = fresh.row(i);
            if row.norm() < 1e-12 {
                // constraint direction annihilated by A_cl^j; trivially held
                continue;
            }
            match current.maximize(&row).map_err(TighteningError::Set)? {
                LpOutcome::Optimal { value, .. } => {
                    if value > fresh.offsets()[i] + tol {
                        all_redundant = false;
                        break;
                    }
                }
                LpOutcome::Unbounded => {
                    all_redundant = false;
                    break;
                }
                LpOutcome::Infeasible => return Err(TighteningError::Set(SetError::EmptyPolytope)),
            }
        }
        if all_redundant {
            return Ok(current.reduce(tol)?);
        }
        current = current.intersect(&fresh);
    }
    Err(TighteningError::NoFiniteDetermination { iter_cap })
}

/// Margins for the terminal-set axioms; negative margin means violation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxiomReport {
    /// worst margin of A_cl Xf inside Xf
    pub invariance_margin: f64,
    /// worst margin of Xf inside the tightened state set
    pub state_margin: f64,
    /// worst margin of K Xf inside the tightened input set
    pub input_margin: f64,
    /// Lyapunov residual |A_cl' P A_cl - P + Q + K'RK|_inf
    pub cost_residual: f64,
    pub a1_pass: bool,
    pub a2_pass: bool,
}

impl AxiomReport {
    pub fn pass(&self) -> bool {
        self.a1_pass && self.a2_pass
    }
}

/// Verify A1 (set inclusions, via support LPs) and A2 (Lyapunov decrease,
/// which holds with equality for the LQR terminal cost).
pub fn check_axioms(
    xf: &HPolytope,
    syn: &Synthesis,
    weights: &CostWeights,
    cs: &HPolytope,
    vs: &HPolytope,
) -> Result<AxiomReport, TighteningError> {
    let margin_of = |rows: &HPolytope, map: &DMatrix<f64>| -> Result<f64, TighteningError> {
        let mut worst = f64::INFINITY;
        for i in 0..rows.num_rows() {
            let dir = map.transpose() * rows.row(i);
            match xf.maximize(&dir).map_err(TighteningError::Set)? {
                LpOutcome::Optimal { value, .. } => worst = worst.min(rows.offsets()[i] - value),
                LpOutcome::Unbounded => worst = worst.min(f64::NEG_INFINITY),
                LpOutcome::Infeasible => return Err(TighteningError::Set(SetError::EmptyPolytope)),
            }
        }
        Ok(worst)
    };
    let eye = DMatrix::identity(syn.a_cl.nrows(), syn.a_cl.ncols());
    let invariance_margin = margin_of(xf, &syn.a_cl)?;
    let state_margin = margin_of(cs, &eye)?;
    let input_margin = margin_of(vs, &syn.k)?;
    let m = &weights.q + syn.k.transpose() * &weights.r * &syn.k;
    let cost_residual = (syn.a_cl.transpose() * &syn.p * &syn.a_cl - &syn.p + &m).amax();
    let tol = 1e-9;
    Ok(AxiomReport {
        invariance_margin,
        state_margin,
        input_margin,
        cost_residual,
        a1_pass: invariance_margin >= -tol && state_margin >= -tol && input_margin >= -tol,
        a2_pass: cost_residual <= 1e-8,
    })
}
