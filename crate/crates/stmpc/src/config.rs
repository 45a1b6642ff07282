//! Experiment configuration: JSON schema, validation with field paths, and
//! the wiring that turns a config into synthesized gains, tube schedules,
//! tightened sets and controllers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig, ControlError, InitMode, Variant};
use crate::prs::{build_tube_schedule, ChanceSpec, PrsError, QuantileConvention, TubeSchedule, TubeTolerances};
use crate::sets::HPolytope;
use crate::sim::{SimConfig, SimEnv};
use crate::synthesis::{lqr_gain, CostWeights, Synthesis, SynthesisError, SystemModel};
use crate::tightening::{build_tightened_schedule, TightenedSchedule, TighteningError};

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    Invalid { field: String, reason: String },
    Synthesis(SynthesisError),
    Prs(PrsError),
    Tightening(TighteningError),
    Control(ControlError),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse(e) => write!(f, "config parse error: {e}"),
            ConfigError::Invalid { field, reason } => write!(f, "config field {field}: {reason}"),
            ConfigError::Synthesis(e) => write!(f, "synthesis: {e}"),
            ConfigError::Prs(e) => write!(f, "reachable sets: {e}"),
            ConfigError::Tightening(e) => write!(f, "tightening: {e}"),
            ConfigError::Control(e) => write!(f, "controller: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<SynthesisError> for ConfigError {
    fn from(e: SynthesisError) -> Self {
        ConfigError::Synthesis(e)
    }
}

impl From<PrsError> for ConfigError {
    fn from(e: PrsError) -> Self {
        ConfigError::Prs(e)
    }
}

impl From<TighteningError> for ConfigError {
    fn from(e: TighteningError) -> Self {
        ConfigError::Tightening(e)
    }
}

impl From<ControlError> for ConfigError {
    fn from(e: ControlError) -> Self {
        ConfigError::Control(e)
    }
}

/// Constraint set given either as a box shorthand or a general H-rep.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum SetSpec {
    Box { #[serde(rename = "box")] bounds: BoxBounds },
    HRep { #[serde(rename = "H")] h: Vec<Vec<f64>>, #[serde(rename = "h")] b: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SetSpec {
    fn to_polytope(&self, dim: usize, field: &str) -> Result<HPolytope, ConfigError> {
        match self {
            SetSpec::Box { bounds } => {
                if bounds.lower.len() != dim || bounds.upper.len() != dim {
                    return Err(ConfigError::Invalid {
                        field: field.to_string(),
                        reason: format!(
                            "box bounds have lengths {}/{}, expected {dim}",
                            bounds.lower.len(),
                            bounds.upper.len()
                        ),
                    });
                }
                for i in 0..dim {
                    if bounds.lower[i] >= bounds.upper[i] {
                        return Err(ConfigError::Invalid {
                            field: format!("{field}.box[{i}]"),
                            reason: "lower bound must be below upper bound".into(),
                        });
                    }
                }
                Ok(HPolytope::from_box(
                    &DVector::from_vec(bounds.lower.clone()),
                    &DVector::from_vec(bounds.upper.clone()),
                ))
            }
            SetSpec::HRep { h, b } => {
                if h.len() != b.len() {
                    return Err(ConfigError::Invalid {
                        field: field.to_string(),
                        reason: format!("H has {} rows but h has {}", h.len(), b.len()),
                    });
                }
                if h.iter().any(|row| row.len() != dim) {
                    return Err(ConfigError::Invalid {
                        field: field.to_string(),
                        reason: format!("H rows must have length {dim}"),
                    });
                }
                let mat = DMatrix::from_row_iterator(h.len(), dim, h.iter().flatten().copied());
                Ok(HPolytope::new(mat, DVector::from_vec(b.clone())))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConstraintSection {
    #[serde(rename = "X")]
    pub x: SetSpec,
    #[serde(rename = "U")]
    pub u: SetSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChanceSection {
    pub epsilon: f64,
    #[serde(default)]
    pub convention: QuantileConvention,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostSection {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ToleranceSection {
    #[serde(default = "default_qp_tol")]
    pub qp_tol: f64,
    #[serde(default = "default_set_tol")]
    pub set_tol: f64,
    #[serde(default = "default_mrpi_eps")]
    pub mrpi_eps: f64,
    #[serde(default = "default_d_conv_tol")]
    pub d_conv_tol: f64,
    #[serde(default = "default_g_max")]
    pub g_max: usize,
    #[serde(default = "default_kcap")]
    pub kcap: usize,
    #[serde(default = "default_moas_cap")]
    pub moas_cap: usize,
}

fn default_qp_tol() -> f64 {
    1e-8
}
fn default_set_tol() -> f64 {
    1e-9
}
fn default_mrpi_eps() -> f64 {
    0.01
}
fn default_d_conv_tol() -> f64 {
    1e-6
}
fn default_g_max() -> usize {
    16
}
fn default_kcap() -> usize {
    1000
}
fn default_moas_cap() -> usize {
    500
}

impl Default for ToleranceSection {
    fn default() -> Self {
        Self {
            qp_tol: default_qp_tol(),
            set_tol: default_set_tol(),
            mrpi_eps: default_mrpi_eps(),
            d_conv_tol: default_d_conv_tol(),
            g_max: default_g_max(),
            kcap: default_kcap(),
            moas_cap: default_moas_cap(),
        }
    }
}

/// The full experiment description. Undocumented fields are rejected so
/// typos fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub constraints: ConstraintSection,
    pub chance: ChanceSection,
    pub cost: CostSection,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The running example configuration (embedded for --paper-example).
    pub fn paper_example() -> Self {
        let text = include_str!("paper_example.json");
        Self::from_json(text).expect("embedded example config is valid")
    }
}

fn matrix_from(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        return Err(ConfigError::Invalid { field: field.into(), reason: "matrix is empty".into() });
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(ConfigError::Invalid { field: field.into(), reason: "ragged matrix".into() });
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

/// Everything built from a config: synthesis, tubes, tightened sets. The
/// controllers are constructed on demand per variant.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sys: SystemModel,
    pub weights: CostWeights,
    pub syn: Synthesis,
    pub chance: ChanceSpec,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub tubes: TubeSchedule,
    pub sets: TightenedSchedule,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self, ConfigError> {
        let a = matrix_from("system.A", &config.system.a)?;
        let b = matrix_from("system.B", &config.system.b)?;
        let w = matrix_from("system.W", &config.system.w)?;
        let n = a.nrows();
        let m = b.ncols();
        let sys = SystemModel::new(a, b, w)?;
        let q = matrix_from("cost.Q", &config.cost.q)?;
        let r = matrix_from("cost.R", &config.cost.r)?;
        if q.nrows() != n || q.ncols() != n {
            return Err(ConfigError::Invalid {
                field: "cost.Q".into(),
                reason: format!("must be {n}x{n}"),
            });
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(ConfigError::Invalid {
                field: "cost.R".into(),
                reason: format!("must be {m}x{m}"),
            });
        }
        let weights = CostWeights::new(q, r)?;
        if config.sim.x0.len() != n {
            return Err(ConfigError::Invalid {
                field: "sim.x0".into(),
                reason: format!("must have length {n}"),
            });
        }
        if config.sim.n_sim == 0 || config.sim.n_s == 0 {
            return Err(ConfigError::Invalid {
                field: "sim".into(),
                reason: "N_sim and N_s must be at least 1".into(),
            });
        }
        let x_set = config.constraints.x.to_polytope(n, "constraints.X")?;
        let u_set = config.constraints.u.to_polytope(m, "constraints.U")?;
        let chance = ChanceSpec::new(config.chance.epsilon, config.chance.convention)
            .map_err(|_| ConfigError::Invalid {
                field: "chance.epsilon".into(),
                reason: "must lie strictly between 0 and 1".into(),
            })?;
        let syn = lqr_gain(&sys, &weights)?;
        let tol = TubeTolerances {
            d_conv_tol: config.tolerances.d_conv_tol,
            mrpi_eps: config.tolerances.mrpi_eps,
            kcap: config.tolerances.kcap,
            g_max: config.tolerances.g_max,
        };
        let tubes = build_tube_schedule(&sys.w, &syn, &chance, &x_set, &tol)?;
        let sets = build_tightened_schedule(
            &x_set,
            &u_set,
            &tubes,
            &syn,
            config.tolerances.set_tol,
            config.tolerances.g_max,
            config.tolerances.moas_cap,
        )?;
        Ok(Self { config, sys, weights, syn, chance, x_set, u_set, tubes, sets })
    }

    /// Controller for the configured variant/init mode.
    pub fn controller(&self) -> Result<Controller, ConfigError> {
        self.controller_for(self.config.controller.variant, self.config.controller.init_mode)
    }

    pub fn controller_for(
        &self,
        variant: Variant,
        init_mode: InitMode,
    ) -> Result<Controller, ConfigError> {
        let cfg = ControllerConfig { variant, init_mode, ..self.config.controller.clone() };
        Ok(Controller::new(
            self.sys.clone(),
            self.syn.clone(),
            self.weights.clone(),
            cfg,
            self.tubes.clone(),
            self.sets.clone(),
        )?)
    }

    pub fn sim_env(&self) -> SimEnv<'_> {
        SimEnv { x_set: &self.x_set, u_set: &self.u_set, z_hrep: &self.sets.z_hrep }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_example_parses_and_builds() {
        let cfg = ExperimentConfig::paper_example();
        assert_eq!(cfg.controller.horizon, 8);
        assert_eq!(cfg.sim.n_sim, 15);
        assert!((cfg.chance.epsilon - 0.2).abs() < 1e-15);
        let exp = Experiment::build(cfg).unwrap();
        assert_eq!(exp.tubes.kmax, 26);
        assert_eq!(exp.tubes.mrpi_s, 14);
        assert!(!exp.sets.over_approximated);
    }

    #[test]
    fn config_round_trip_is_identity() {
        let cfg = ExperimentConfig::paper_example();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn dimension_errors_name_fields() {
        let mut cfg = ExperimentConfig::paper_example();
        cfg.sim.x0 = vec![1.0];
        match Experiment::build(cfg) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "sim.x0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::paper_example().to_json()).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn oversized_tube_reports_empty_tightening() {
        let mut cfg = ExperimentConfig::paper_example();
        // disturbance large enough that Z outgrows X
        cfg.system.w = vec![vec![4.0, 0.0], vec![0.0, 4.0]];
        match Experiment::build(cfg) {
            Err(ConfigError::Tightening(TighteningError::EmptyTightening { which, .. })) => {
                assert!(!which.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
