//! Receding-horizon controllers: the time-varying and constant tube
//! variants, each with an optional enhanced-feasibility mode that relaxes
//! the initial tube membership with a penalized slack.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::prs::TubeSchedule;
use crate::qp::{solve_qp, QpError, QpOutcome, QpProblem};
use crate::sets::HPolytope;
use crate::synthesis::{CostWeights, Synthesis, SystemModel};
use crate::tightening::TightenedSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "pTTSMPC")]
    TimeVarying,
    #[serde(rename = "pTTSMPC-en")]
    TimeVaryingEnhanced,
    #[serde(rename = "pCTSMPC")]
    Constant,
    #[serde(rename = "pCTSMPC-en")]
    ConstantEnhanced,
}

impl Variant {
    pub fn all() -> [Variant; 4] {
        [
            Variant::TimeVarying,
            Variant::TimeVaryingEnhanced,
            Variant::Constant,
            Variant::ConstantEnhanced,
        ]
    }

    pub fn is_enhanced(self) -> bool {
        matches!(self, Variant::TimeVaryingEnhanced | Variant::ConstantEnhanced)
    }

    pub fn is_constant(self) -> bool {
        matches!(self, Variant::Constant | Variant::ConstantEnhanced)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::TimeVarying => "pTTSMPC",
            Variant::TimeVaryingEnhanced => "pTTSMPC-en",
            Variant::Constant => "pCTSMPC",
            Variant::ConstantEnhanced => "pCTSMPC-en",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pTTSMPC" => Ok(Variant::TimeVarying),
            "pTTSMPC-en" => Ok(Variant::TimeVaryingEnhanced),
            "pCTSMPC" => Ok(Variant::Constant),
            "pCTSMPC-en" => Ok(Variant::ConstantEnhanced),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// How the initial nominal state is anchored at each time instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InitMode {
    /// membership x_t - s_{0|t} in D_t (or Z), the flexible scheme
    #[default]
    #[serde(rename = "flexible")]
    Flexible,
    /// s_{0|t} = s_{1|t-1}
    #[serde(rename = "prev-predicted")]
    PrevPredicted,
    /// s_{0|t} = s_{t|0}, the stored first plan extended by the terminal law
    #[serde(rename = "first-predicted")]
    FirstPredicted,
    /// s_{0|t} = x_t when feasible, else s_{1|t-1}
    #[serde(rename = "measured-else-prev")]
    MeasuredElsePrev,
}

impl InitMode {
    pub fn all_cases() -> [InitMode; 4] {
        [
            InitMode::Flexible,
            InitMode::PrevPredicted,
            InitMode::FirstPredicted,
            InitMode::MeasuredElsePrev,
        ]
    }

    pub fn case_name(self) -> &'static str {
        match self {
            InitMode::Flexible => "Case1",
            InitMode::PrevPredicted => "Case2",
            InitMode::FirstPredicted => "Case3",
            InitMode::MeasuredElsePrev => "Case4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub variant: Variant,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default = "default_qp_tol")]
    pub qp_tol: f64,
}

fn default_gamma() -> f64 {
    100.0
}

fn default_qp_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlError {
    Config(String),
    MissingHistory { mode: InitMode, t: usize },
    /// even the relaxed initial constraint has no feasible plan
    InfeasibleEvenRelaxed { lambda_cap: f64 },
    Solver(QpError),
    /// a solved QP missed the accuracy contract
    Accuracy { worst: f64 },
}

impl std::fmt::Display for ControlError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlError::Config(s) => write!(f, "controller configuration: {s}"),
            ControlError::MissingHistory { mode, t } => {
                write!(f, "{:?} needs history at t={t} but none was provided", mode)
            }
            ControlError::InfeasibleEvenRelaxed { lambda_cap } => {
                write!(f, "no feasible plan even with the initial tube scaled to {lambda_cap}")
            }
            ControlError::Solver(e) => write!(f, "QP solver: {e}"),
            ControlError::Accuracy { worst } => {
                write!(f, "KKT residual {worst:e} exceeds the accuracy contract")
            }
        }
    }
}

impl std::error::Error for ControlError {}

impl From<QpError> for ControlError {
    fn from(e: QpError) -> Self {
        ControlError::Solver(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

/// Solution of one finite-horizon problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcpSolution {
    pub status: SolveStatus,
    pub s0: DVector<f64>,
    /// v_{0|t}..v_{N-1|t}
    pub v: Vec<DVector<f64>>,
    /// nominal trajectory s_{0|t}..s_{N|t}
    pub s: Vec<DVector<f64>>,
    pub lambda: f64,
    pub cost: f64,
}

impl OcpSolution {
    fn infeasible(n: usize, lambda: f64) -> Self {
        OcpSolution {
            status: SolveStatus::Infeasible,
            s0: DVector::zeros(n),
            v: Vec::new(),
            s: Vec::new(),
            lambda,
            cost: f64::INFINITY,
        }
    }
}

/// Initial-state anchoring resolved for one instant.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// x_t - s_{0|t} in lambda * (D_t or Z)
    Membership { lambda: f64 },
    /// s_{0|t} pinned
    FixedS0(DVector<f64>),
}

/// What the harness carries between steps.
#[derive(Debug, Clone, Default)]
pub struct ControlHistory {
    pub prev: Option<OcpSolution>,
    /// the t=0 nominal plan s_{0|0}..s_{N|0}
    pub first_plan: Option<Vec<DVector<f64>>>,
}

impl ControlHistory {
    pub fn update(&mut self, sol: &OcpSolution, t: usize) {
        if sol.status == SolveStatus::Optimal {
            if t == 0 {
                self.first_plan = Some(sol.s.clone());
            }
            self.prev = Some(sol.clone());
        }
    }
}

pub struct StepOutcome {
    pub sol: OcpSolution,
    /// control input; None when the instant was infeasible
    pub u: Option<DVector<f64>>,
}

/// Immutable after construction; a step is a pure function of
/// (x_t, t, history), so controllers can be shared across threads.
pub struct Controller {
    pub sys: SystemModel,
    pub syn: Synthesis,
    pub weights: CostWeights,
    pub cfg: ControllerConfig,
    pub tubes: TubeSchedule,
    pub sets: TightenedSchedule,
    /// s_k = M_k [s0; v], k = 0..=N
    m_maps: Vec<DMatrix<f64>>,
    /// Hessian of the condensed objective (the P of 0.5 z'Pz)
    hess: DMatrix<f64>,
    /// fixed constraint rows per saturated time index
    templates: Vec<Template>,
}

struct Template {
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl Controller {
    pub fn new(
        sys: SystemModel,
        syn: Synthesis,
        weights: CostWeights,
        cfg: ControllerConfig,
        tubes: TubeSchedule,
        sets: TightenedSchedule,
    ) -> Result<Self, ControlError> {
        if cfg.horizon == 0 {
            return Err(ControlError::Config("prediction horizon N must be >= 1".into()));
        }
        if cfg.qp_tol <= 0.0 {
            return Err(ControlError::Config("qp_tol must be positive".into()));
        }
        if cfg.variant.is_enhanced() {
            if cfg.gamma <= 0.0 {
                return Err(ControlError::Config("gamma must be positive for -en variants".into()));
            }
            if cfg.init_mode != InitMode::Flexible {
                return Err(ControlError::Config(
                    "enhanced variants relax the flexible initial constraint; set init_mode = flexible"
                        .into(),
                ));
            }
        }
        let n = sys.state_dim();
        let m = sys.input_dim();
        let horizon = cfg.horizon;
        let d = n + horizon * m;

        // s_k = A^k s0 + sum_j A^(k-1-j) B v_j
        let mut a_pow = vec![DMatrix::identity(n, n)];
        for _ in 0..horizon {
            a_pow.push(&sys.a * a_pow.last().unwrap());
        }
        let mut m_maps = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            let mut mk = DMatrix::zeros(n, d);
            mk.view_mut((0, 0), (n, n)).copy_from(&a_pow[k]);
            for j in 0..k {
                let block = &a_pow[k - 1 - j] * &sys.b;
                mk.view_mut((0, n + j * m), (n, m)).copy_from(&block);
            }
            m_maps.push(mk);
        }

        let mut half = DMatrix::zeros(d, d);
        for k in 0..horizon {
            half += m_maps[k].transpose() * &weights.q * &m_maps[k];
            let mut vk = DMatrix::zeros(m, d);
            vk.view_mut((0, n + k * m), (m, m)).copy_from(&DMatrix::identity(m, m));
            half += vk.transpose() * &weights.r * &vk;
        }
        half += m_maps[horizon].transpose() * &syn.p * &m_maps[horizon];
        let hess = &half + half.transpose(); // P = 2 * half, symmetrized

        // constraint templates; indices saturate at kmax so one template per
        // t in 0..=kmax covers every instant
        let t_count = if cfg.variant.is_constant() { 1 } else { tubes.kmax + 1 };
        let mut templates = Vec::with_capacity(t_count);
        for t in 0..t_count {
            templates.push(Self::build_template(
                &cfg, &sets, &m_maps, n, m, horizon, d, t,
            ));
        }

        Ok(Self { sys, syn, weights, cfg, tubes, sets, m_maps, hess, templates })
    }

    fn build_template(
        cfg: &ControllerConfig,
        sets: &TightenedSchedule,
        m_maps: &[DMatrix<f64>],
        n: usize,
        m: usize,
        horizon: usize,
        d: usize,
        t: usize,
    ) -> Template {
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for k in 1..horizon {
            let set = if cfg.variant.is_constant() { &sets.cbar } else { sets.ct_at(k + t) };
            for i in 0..set.num_rows() {
                rows.push((set.row(i).transpose() * &m_maps[k]).transpose());
                rhs.push(set.offsets()[i]);
            }
        }
        for k in 0..horizon {
            let set = if cfg.variant.is_constant() { &sets.vbar } else { sets.vt_at(k + t) };
            for i in 0..set.num_rows() {
                let mut row = DVector::zeros(d);
                let normal = set.row(i);
                for j in 0..m {
                    row[n + k * m + j] = normal[j];
                }
                rows.push(row);
                rhs.push(set.offsets()[i]);
            }
        }
        for i in 0..sets.xf.num_rows() {
            rows.push((sets.xf.row(i).transpose() * &m_maps[horizon]).transpose());
            rhs.push(sets.xf.offsets()[i]);
        }
        // normalize rows so feasibility tolerances are comparable
        let mut g = DMatrix::zeros(rows.len(), d);
        let mut gv = DVector::zeros(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let norm = row.norm();
            if norm > 1e-14 {
                g.row_mut(i).copy_from(&(row / norm).transpose());
                gv[i] = rhs[i] / norm;
            } else {
                g.row_mut(i).copy_from(&row.transpose());
                gv[i] = rhs[i];
            }
        }
        Template { rows: g, rhs: gv }
    }

    pub fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn template_at(&self, t: usize) -> &Template {
        if self.cfg.variant.is_constant() {
            &self.templates[0]
        } else {
            &self.templates[t.min(self.tubes.kmax)]
        }
    }

    fn init_hrep_at(&self, t: usize) -> &HPolytope {
        if self.cfg.variant.is_constant() {
            &self.sets.z_hrep
        } else {
            self.sets.d_hrep_at(t)
        }
    }

    /// Condensed QP over z = (s0, v) for the membership initial constraint,
    /// or over v alone when s0 is pinned.
    pub fn build_ocp(&self, x_t: &DVector<f64>, t: usize, init: &InitSpec) -> QpProblem {
        let n = self.state_dim();
        let tmpl = self.template_at(t);
        match init {
            InitSpec::Membership { lambda } => {
                let ih = self.init_hrep_at(t);
                let extra = ih.num_rows();
                let d = self.hess.nrows();
                let mut g = DMatrix::zeros(tmpl.rows.nrows() + extra, d);
                let mut gv = DVector::zeros(tmpl.rows.nrows() + extra);
                g.rows_mut(0, tmpl.rows.nrows()).copy_from(&tmpl.rows);
                gv.rows_mut(0, tmpl.rows.nrows()).copy_from(&tmpl.rhs);
                for i in 0..extra {
                    let normal = ih.row(i);
                    for j in 0..n {
                        g[(tmpl.rows.nrows() + i, j)] = -normal[j];
                    }
                    gv[tmpl.rows.nrows() + i] =
                        lambda * ih.offsets()[i] - normal.dot(x_t);
                }
                QpProblem {
                    p_mat: self.hess.clone(),
                    q_vec: DVector::zeros(d),
                    g_mat: g,
                    g_vec: gv,
                }
            }
            InitSpec::FixedS0(s0) => {
                let d = self.hess.nrows();
                let dv = d - n;
                let p_vv = self.hess.view((n, n), (dv, dv)).into_owned();
                let p_vs = self.hess.view((n, 0), (dv, n)).into_owned();
                let q_v = &p_vs * s0;
                let g_s = tmpl.rows.columns(0, n).into_owned();
                let mut g_v = tmpl.rows.columns(n, dv).into_owned();
                let mut gv = &tmpl.rhs - &g_s * s0;
                // renormalize the reduced rows
                for i in 0..g_v.nrows() {
                    let norm = g_v.row(i).norm();
                    if norm > 1e-14 {
                        for j in 0..dv {
                            g_v[(i, j)] /= norm;
                        }
                        gv[i] /= norm;
                    }
                }
                QpProblem { p_mat: p_vv, q_vec: q_v, g_mat: g_v, g_vec: gv }
            }
        }
    }

    fn decode(
        &self,
        x_t: &DVector<f64>,
        init: &InitSpec,
        z: &DVector<f64>,
        value: f64,
        lambda: f64,
    ) -> OcpSolution {
        let n = self.state_dim();
        let m = self.input_dim();
        let horizon = self.cfg.horizon;
        let full = match init {
            InitSpec::Membership { .. } => z.clone(),
            InitSpec::FixedS0(s0) => {
                let mut full = DVector::zeros(n + z.len());
                full.rows_mut(0, n).copy_from(s0);
                full.rows_mut(n, z.len()).copy_from(z);
                full
            }
        };
        let s: Vec<DVector<f64>> = self.m_maps.iter().map(|mk| mk * &full).collect();
        let v: Vec<DVector<f64>> =
            (0..horizon).map(|k| full.rows(n + k * m, m).into_owned()).collect();
        let cost = match init {
            InitSpec::Membership { .. } => value,
            InitSpec::FixedS0(s0) => {
                // add back the constant block 0.5 s0' P_ss s0
                let p_ss = self.hess.view((0, 0), (n, n));
                value + 0.5 * (s0.transpose() * p_ss * s0)[(0, 0)]
            }
        };
        let _ = x_t;
        OcpSolution {
            status: SolveStatus::Optimal,
            s0: s[0].clone(),
            v,
            s,
            lambda,
            cost,
        }
    }

    /// Solve the problem at one instant with a resolved initial spec.
    pub fn solve_at(
        &self,
        x_t: &DVector<f64>,
        t: usize,
        init: &InitSpec,
        warm: Option<&DVector<f64>>,
    ) -> Result<OcpSolution, ControlError> {
        // a point-shaped initial tube collapses the membership to an equality
        let init = match init {
            InitSpec::Membership { lambda } if self.init_hrep_at(t).num_rows() == 0 => {
                let _ = lambda;
                InitSpec::FixedS0(x_t.clone())
            }
            other => other.clone(),
        };
        let qp = self.build_ocp(x_t, t, &init);
        // warm starts may be full-length while the problem is v-only
        let warm_sized = warm.map(|w| {
            if w.len() == qp.dim() {
                w.clone()
            } else {
                w.rows(w.len() - qp.dim(), qp.dim()).into_owned()
            }
        });
        match solve_qp(&qp, self.cfg.qp_tol, warm_sized.as_ref())? {
            QpOutcome::Optimal(sol) => {
                if sol.residuals.worst() > 1e-6 {
                    return Err(ControlError::Accuracy { worst: sol.residuals.worst() });
                }
                let lambda = match &init {
                    InitSpec::Membership { lambda } => *lambda,
                    InitSpec::FixedS0(_) => 1.0,
                };
                Ok(self.decode(x_t, &init, &sol.z, sol.value, lambda))
            }
            QpOutcome::Infeasible { .. } => Ok(OcpSolution::infeasible(self.state_dim(), 1.0)),
        }
    }

    /// Enhanced-feasibility scheme: try lambda = 1; otherwise find the
    /// minimal feasible scaling by doubling and bisection, solve there, and
    /// add the sigmoid penalty to the reported cost.
    pub fn solve_enhanced(
        &self,
        x_t: &DVector<f64>,
        t: usize,
        warm: Option<&DVector<f64>>,
    ) -> Result<OcpSolution, ControlError> {
        let base = self.solve_at(x_t, t, &InitSpec::Membership { lambda: 1.0 }, warm)?;
        if base.status == SolveStatus::Optimal {
            return Ok(base); // psi(1) = 0
        }
        let feasible_at = |lambda: f64| -> Result<bool, ControlError> {
            let qp = self.build_ocp(x_t, t, &InitSpec::Membership { lambda });
            Ok(!matches!(
                crate::lp::feasible_point(&qp.g_mat, &qp.g_vec, crate::lp::FEAS_TOL)
                    .map_err(QpError::from)?,
                crate::lp::LpOutcome::Infeasible
            ))
        };
        let cap = (1u64 << 20) as f64;
        let mut hi = 2.0f64;
        while !feasible_at(hi)? {
            hi *= 2.0;
            if hi > cap {
                return Err(ControlError::InfeasibleEvenRelaxed { lambda_cap: cap });
            }
        }
        let mut lo = 1.0f64;
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if feasible_at(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let lambda = hi;
        let solved = self.solve_at(x_t, t, &InitSpec::Membership { lambda }, warm)?;
        if solved.status != SolveStatus::Optimal {
            // the LP said feasible at tolerance; nudge once before failing
            let solved = self.solve_at(x_t, t, &InitSpec::Membership { lambda: lambda + 1e-9 }, warm)?;
            if solved.status != SolveStatus::Optimal {
                return Err(ControlError::InfeasibleEvenRelaxed { lambda_cap: lambda });
            }
            return Ok(self.finish_enhanced(x_t, t, solved, lambda + 1e-9, warm));
        }
        Ok(self.finish_enhanced(x_t, t, solved, lambda, warm))
    }

    fn finish_enhanced(
        &self,
        x_t: &DVector<f64>,
        t: usize,
        mut solved: OcpSolution,
        lambda: f64,
        warm: Option<&DVector<f64>>,
    ) -> OcpSolution {
        let total = solved.cost + self.penalty(lambda);
        // the minimal-lambda point should be a local minimum of the total
        // cost; probe one step outward and log when it is not
        if let Ok(probe) = self.solve_at(x_t, t, &InitSpec::Membership { lambda: lambda + 1e-3 }, warm)
        {
            if probe.status == SolveStatus::Optimal {
                let probe_total = probe.cost + self.penalty(lambda + 1e-3);
                if probe_total < total - 1e-9 {
                    log::warn!(
                        "enhanced solve at t={t}: total cost decreases past the minimal feasible lambda ({total} -> {probe_total})"
                    );
                }
            }
        }
        solved.lambda = lambda;
        solved.cost = total;
        solved
    }

    /// psi(lambda) = gamma * (1/(1+e^-(lambda-1)) - 1/2).
    pub fn penalty(&self, lambda: f64) -> f64 {
        self.cfg.gamma * (1.0 / (1.0 + (-(lambda - 1.0)).exp()) - 0.5)
    }

    /// Resolve the initial-state anchoring for the configured mode.
    pub fn initialize_nominal(
        &self,
        x_t: &DVector<f64>,
        t: usize,
        history: &ControlHistory,
    ) -> Result<InitSpec, ControlError> {
        match self.cfg.init_mode {
            InitMode::Flexible => Ok(InitSpec::Membership { lambda: 1.0 }),
            InitMode::PrevPredicted => {
                if t == 0 {
                    return Ok(InitSpec::FixedS0(x_t.clone()));
                }
                let prev = history.prev.as_ref().ok_or(ControlError::MissingHistory {
                    mode: InitMode::PrevPredicted,
                    t,
                })?;
                Ok(InitSpec::FixedS0(prev.s[1].clone()))
            }
            InitMode::FirstPredicted => {
                if t == 0 {
                    return Ok(InitSpec::FixedS0(x_t.clone()));
                }
                let plan = history.first_plan.as_ref().ok_or(ControlError::MissingHistory {
                    mode: InitMode::FirstPredicted,
                    t,
                })?;
                if t < plan.len() {
                    Ok(InitSpec::FixedS0(plan[t].clone()))
                } else {
                    // beyond the stored horizon: roll the terminal law
                    let mut s = plan.last().expect("nonempty plan").clone();
                    for _ in 0..(t - (plan.len() - 1)) {
                        s = &self.syn.a_cl * s;
                    }
                    Ok(InitSpec::FixedS0(s))
                }
            }
            InitMode::MeasuredElsePrev => Ok(InitSpec::FixedS0(x_t.clone())),
        }
    }

    /// Shifted previous solution, the Theorem-1 candidate, used to warm
    /// start the solver.
    fn shifted_candidate(&self, history: &ControlHistory, init: &InitSpec) -> Option<DVector<f64>> {
        let prev = history.prev.as_ref()?;
        if prev.status != SolveStatus::Optimal {
            return None;
        }
        let n = self.state_dim();
        let m = self.input_dim();
        let horizon = self.cfg.horizon;
        let mut z = DVector::zeros(n + horizon * m);
        z.rows_mut(0, n).copy_from(&prev.s[1]);
        for k in 0..horizon - 1 {
            z.rows_mut(n + k * m, m).copy_from(&prev.v[k + 1]);
        }
        let terminal = &self.syn.k * &prev.s[horizon];
        z.rows_mut(n + (horizon - 1) * m, m).copy_from(&terminal);
        match init {
            InitSpec::Membership { .. } => Some(z),
            InitSpec::FixedS0(_) => Some(z.rows(n, horizon * m).into_owned()),
        }
    }

    /// One receding-horizon step: resolve the initial spec, solve (with the
    /// Case-4 fallback when configured), and apply the control law.
    pub fn step(
        &self,
        x_t: &DVector<f64>,
        t: usize,
        history: &ControlHistory,
    ) -> Result<StepOutcome, ControlError> {
        let init = self.initialize_nominal(x_t, t, history)?;
        let warm = self.shifted_candidate(history, &init);
        let mut sol = if self.cfg.variant.is_enhanced() {
            self.solve_enhanced(x_t, t, warm.as_ref())?
        } else {
            self.solve_at(x_t, t, &init, warm.as_ref())?
        };
        if sol.status == SolveStatus::Infeasible
            && self.cfg.init_mode == InitMode::MeasuredElsePrev
            && t > 0
        {
            if let Some(prev) = history.prev.as_ref() {
                let fallback = InitSpec::FixedS0(prev.s[1].clone());
                let warm = self.shifted_candidate(history, &fallback);
                sol = self.solve_at(x_t, t, &fallback, warm.as_ref())?;
            }
        }
        let u = (sol.status == SolveStatus::Optimal)
            .then(|| control_law(x_t, &sol, &self.syn.k));
        Ok(StepOutcome { sol, u })
    }
}

/// u = K (x_t - s0*) + v0*.
pub fn control_law(x_t: &DVector<f64>, sol: &OcpSolution, k: &DMatrix<f64>) -> DVector<f64> {
    k * (x_t - &sol.s0) + &sol.v[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prs::{build_tube_schedule, ChanceSpec, QuantileConvention, TubeTolerances};
    use crate::synthesis::lqr_gain;
    use crate::tightening::build_tightened_schedule;
    use nalgebra::{dmatrix, dvector};

    fn paper_controller(variant: Variant, init_mode: InitMode) -> Controller {
        let sys = SystemModel::new(
            dmatrix![1.0, 0.0075; -0.143, 0.996],
            dmatrix![4.798; 0.115],
            dmatrix![0.0016, 0.0; 0.0, 0.0016],
        )
        .unwrap();
        let w = CostWeights::new(dmatrix![1.0, 0.0; 0.0, 10.0], dmatrix![1.0]).unwrap();
        let syn = lqr_gain(&sys, &w).unwrap();
        let x_set = HPolytope::from_box(&dvector![-2.0, -3.0], &dvector![2.0, 3.0]);
        let u_set = HPolytope::from_box(&dvector![-0.2], &dvector![0.2]);
        let chance = ChanceSpec::new(0.2, QuantileConvention::PaperLiteral).unwrap();
        let tol = TubeTolerances { g_max: 64, ..TubeTolerances::default() };
        let tubes = build_tube_schedule(&sys.w, &syn, &chance, &x_set, &tol).unwrap();
        let sets = build_tightened_schedule(&x_set, &u_set, &tubes, &syn, 1e-9, 64, 500).unwrap();
        let cfg = ControllerConfig {
            horizon: 8,
            gamma: 100.0,
            variant,
            init_mode,
            qp_tol: 1e-8,
        };
        Controller::new(sys, syn, w, cfg, tubes, sets).unwrap()
    }

    #[test]
    fn origin_is_optimal_for_trivial_problem() {
        // N=1, A=0, B=I, loose sets, x=0: minimizer is the origin with J=0
        let sys = SystemModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 1e-4,
        )
        .unwrap();
        let w = CostWeights::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let syn = lqr_gain(&sys, &w).unwrap();
        let x_set = HPolytope::from_box(&dvector![-10.0, -10.0], &dvector![10.0, 10.0]);
        let u_set = HPolytope::from_box(&dvector![-10.0, -10.0], &dvector![10.0, 10.0]);
        let chance = ChanceSpec::new(0.2, QuantileConvention::PaperLiteral).unwrap();
        let tubes =
            build_tube_schedule(&sys.w, &syn, &chance, &x_set, &TubeTolerances::default()).unwrap();
        let sets = build_tightened_schedule(&x_set, &u_set, &tubes, &syn, 1e-9, 16, 200).unwrap();
        let cfg = ControllerConfig {
            horizon: 1,
            gamma: 100.0,
            variant: Variant::TimeVarying,
            init_mode: InitMode::Flexible,
            qp_tol: 1e-8,
        };
        let ctrl = Controller::new(sys, syn, w, cfg, tubes, sets).unwrap();
        let sol = ctrl
            .solve_at(&dvector![0.0, 0.0], 0, &InitSpec::Membership { lambda: 1.0 }, None)
            .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.s0.amax() < 1e-8);
        assert!(sol.v[0].amax() < 1e-8);
        assert!(sol.cost.abs() < 1e-12);
    }

    #[test]
    fn saturated_templates_give_identical_problems() {
        let ctrl = paper_controller(Variant::TimeVarying, InitMode::Flexible);
        let x = dvector![0.1, -0.2];
        let kmax = ctrl.tubes.kmax;
        let a = ctrl.build_ocp(&x, kmax, &InitSpec::Membership { lambda: 1.0 });
        let b = ctrl.build_ocp(&x, kmax + 7, &InitSpec::Membership { lambda: 1.0 });
        assert_eq!(a, b);
    }

    #[test]
    fn paper_initial_state_is_feasible() {
        for variant in Variant::all() {
            let ctrl = paper_controller(variant, InitMode::Flexible);
            let hist = ControlHistory::default();
            let out = ctrl.step(&dvector![2.5, 2.8], 0, &hist).unwrap();
            assert_eq!(out.sol.status, SolveStatus::Optimal, "{}", variant.name());
            assert!((out.sol.lambda - 1.0).abs() < 1e-12);
            let u = out.u.unwrap();
            assert!(u.amax() <= 0.2 + 1e-9, "{}: first input respects U", variant.name());
        }
    }

    #[test]
    fn nominal_recursion_holds_on_solutions() {
        let ctrl = paper_controller(Variant::TimeVarying, InitMode::Flexible);
        let sol = ctrl
            .solve_at(&dvector![2.5, 2.8], 0, &InitSpec::Membership { lambda: 1.0 }, None)
            .unwrap();
        for k in 0..ctrl.cfg.horizon {
            let next = &ctrl.sys.a * &sol.s[k] + &ctrl.sys.b * &sol.v[k];
            assert!((&next - &sol.s[k + 1]).amax() <= 1e-9);
        }
    }

    #[test]
    fn control_law_examples() {
        let sol = OcpSolution {
            status: SolveStatus::Optimal,
            s0: dvector![1.0],
            v: vec![dvector![0.25]],
            s: vec![dvector![1.0], dvector![0.5]],
            lambda: 1.0,
            cost: 0.0,
        };
        // x = s0: u = v0
        let u = control_law(&dvector![1.0], &sol, &dmatrix![-0.5]);
        assert!((u[0] - 0.25).abs() < 1e-15);
        // x - s0 = 2, K = -0.5, v0 = 0
        let sol0 = OcpSolution { v: vec![dvector![0.0]], ..sol };
        let u = control_law(&dvector![3.0], &sol0, &dmatrix![-0.5]);
        assert!((u[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn enhanced_matches_base_when_feasible() {
        let base = paper_controller(Variant::TimeVarying, InitMode::Flexible);
        let enhanced = paper_controller(Variant::TimeVaryingEnhanced, InitMode::Flexible);
        let x = dvector![2.5, 2.8];
        let a = base.solve_at(&x, 0, &InitSpec::Membership { lambda: 1.0 }, None).unwrap();
        let b = enhanced.solve_enhanced(&x, 0, None).unwrap();
        assert_eq!(b.lambda, 1.0);
        assert!((a.cost - b.cost).abs() < 1e-9);
        assert!((&a.s0 - &b.s0).amax() < 1e-9);
    }

    #[test]
    fn enhanced_minimal_lambda_matches_interval_arithmetic() {
        // scalar toy: the feasible s0 values form an interval, so the
        // minimal slack for an x just outside it is 1 + delta/radius
        let sys = SystemModel::new(dmatrix![0.5], dmatrix![1.0], dmatrix![0.0016]).unwrap();
        let w = CostWeights::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
        let syn = lqr_gain(&sys, &w).unwrap();
        let x_set = HPolytope::from_box(&dvector![-1.0], &dvector![1.0]);
        let u_set = HPolytope::from_box(&dvector![-0.3], &dvector![0.3]);
        let chance = ChanceSpec::new(0.2, QuantileConvention::PaperLiteral).unwrap();
        let tubes =
            build_tube_schedule(&sys.w, &syn, &chance, &x_set, &TubeTolerances::default()).unwrap();
        let sets = build_tightened_schedule(&x_set, &u_set, &tubes, &syn, 1e-9, 16, 200).unwrap();
        let cfg = ControllerConfig {
            horizon: 3,
            gamma: 100.0,
            variant: Variant::TimeVaryingEnhanced,
            init_mode: InitMode::Flexible,
            qp_tol: 1e-8,
        };
        let ctrl = Controller::new(sys, syn, w, cfg, tubes, sets).unwrap();
        // the plan rows alone bound s0 to an interval; find its right end
        let relaxed = ctrl.build_ocp(&dvector![0.0], 0, &InitSpec::Membership { lambda: 1e9 });
        let mut c = DVector::zeros(relaxed.p_mat.nrows());
        c[0] = 1.0;
        let s0_max = match crate::lp::maximize(&c, &relaxed.g_mat, &relaxed.g_vec).unwrap() {
            crate::lp::LpOutcome::Optimal { value, .. } => value,
            other => panic!("unexpected {other:?}"),
        };
        let radius = ctrl.tubes.d_sets[0].support(&dvector![1.0]);
        let delta = 0.3 * radius;
        let x = dvector![s0_max + radius + delta];
        let sol = ctrl.solve_enhanced(&x, 0, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let expected = 1.0 + delta / radius;
        assert!(
            (sol.lambda - expected).abs() <= 1e-3,
            "lambda {} vs interval oracle {expected}",
            sol.lambda
        );
    }

    #[test]
    fn case_modes_resolve_targets() {
        let ctrl = paper_controller(Variant::TimeVarying, InitMode::PrevPredicted);
        let x0 = dvector![2.5, 2.8];
        let mut hist = ControlHistory::default();
        let out0 = ctrl.step(&x0, 0, &hist).unwrap();
        assert_eq!(out0.sol.status, SolveStatus::Optimal);
        // t=0 anchors the nominal at the measured state
        assert!((&out0.sol.s0 - &x0).amax() < 1e-9);
        hist.update(&out0.sol, 0);
        let x1 = &ctrl.sys.a * &x0 + &ctrl.sys.b * out0.u.as_ref().unwrap();
        let out1 = ctrl.step(&x1, 1, &hist).unwrap();
        // Case2: equality to s_{1|0}
        assert!((&out1.sol.s0 - &out0.sol.s[1]).amax() < 1e-9);

        // Case3 target at t beyond the stored plan rolls the terminal law
        let ctrl3 = paper_controller(Variant::TimeVarying, InitMode::FirstPredicted);
        let mut hist3 = ControlHistory::default();
        let o0 = ctrl3.step(&x0, 0, &hist3).unwrap();
        hist3.update(&o0.sol, 0);
        let spec = ctrl3.initialize_nominal(&x0, 10, &hist3).unwrap();
        let plan = hist3.first_plan.as_ref().unwrap();
        let mut expect = plan[8].clone();
        expect = &ctrl3.syn.a_cl * expect;
        expect = &ctrl3.syn.a_cl * expect;
        match spec {
            InitSpec::FixedS0(s) => assert!((s - expect).amax() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_history_is_reported() {
        let ctrl = paper_controller(Variant::TimeVarying, InitMode::PrevPredicted);
        let hist = ControlHistory::default();
        let err = ctrl.initialize_nominal(&dvector![0.0, 0.0], 3, &hist).unwrap_err();
        assert!(matches!(err, ControlError::MissingHistory { .. }));
    }

    #[test]
    fn enhanced_requires_flexible_init() {
        let sys = SystemModel::new(dmatrix![0.5], dmatrix![1.0], dmatrix![0.01]).unwrap();
        let w = CostWeights::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
        let syn = lqr_gain(&sys, &w).unwrap();
        let x_set = HPolytope::from_box(&dvector![-5.0], &dvector![5.0]);
        let u_set = HPolytope::from_box(&dvector![-5.0], &dvector![5.0]);
        let chance = ChanceSpec::new(0.2, QuantileConvention::PaperLiteral).unwrap();
        let tubes =
            build_tube_schedule(&sys.w, &syn, &chance, &x_set, &TubeTolerances::default()).unwrap();
        let sets = build_tightened_schedule(&x_set, &u_set, &tubes, &syn, 1e-9, 16, 200).unwrap();
        let cfg = ControllerConfig {
            horizon: 3,
            gamma: 100.0,
            variant: Variant::TimeVaryingEnhanced,
            init_mode: InitMode::PrevPredicted,
            qp_tol: 1e-8,
        };
        assert!(matches!(
            Controller::new(sys, syn, w, cfg, tubes, sets),
            Err(ControlError::Config(_))
        ));
    }

    #[test]
    fn shifted_candidate_is_feasible_across_steps() {
        // Theorem-1 substrate: the shifted plan satisfies the fixed rows of
        // the next problem deterministically
        let ctrl = paper_controller(Variant::TimeVarying, InitMode::Flexible);
        let mut hist = ControlHistory::default();
        let mut x = dvector![2.5, 2.8];
        for t in 0..20 {
            let out = ctrl.step(&x, t, &hist).unwrap();
            assert_eq!(out.sol.status, SolveStatus::Optimal, "t={t}");
            hist.update(&out.sol, t);
            if t >= 1 {
                let cand = ctrl
                    .shifted_candidate(&hist, &InitSpec::Membership { lambda: 1.0 })
                    .unwrap();
                let tmpl = ctrl.template_at(t + 1);
                let vals = &tmpl.rows * &cand;
                for i in 0..tmpl.rhs.len() {
                    assert!(
                        vals[i] <= tmpl.rhs[i] + 1e-8,
                        "t={t}: shifted candidate violates fixed row {i}"
                    );
                }
            }
            // noiseless rollout
            x = &ctrl.sys.a * &x + &ctrl.sys.b * out.u.as_ref().unwrap();
        }
    }
}
