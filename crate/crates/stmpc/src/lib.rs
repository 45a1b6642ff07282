//! Probabilistic tube-based stochastic MPC for linear systems with
//! unbounded additive Gaussian disturbances.
//!
//! The pipeline is built offline, then run in closed loop:
//!
//! 1. [`synthesis`] — LQR gain K, closed loop A_cl = A + BK, terminal cost P.
//! 2. [`prs`] — disturbance confidence region E^w, error covariances, the
//!    relaxed probabilistic reachable sets D_k and the mRPI bound Z.
//! 3. [`tightening`] — tightened state/input sets (time-varying and
//!    constant) and the maximal output admissible terminal set.
//! 4. [`controller`] — the four receding-horizon variants as condensed QPs
//!    with flexible, fixed or slack-relaxed initial anchoring.
//! 5. [`sim`] — seeded closed-loop rollouts and Monte Carlo statistics.
//!
//! Set arithmetic lives in [`sets`] (zonotopes and H-polytopes over a small
//! deterministic simplex in [`lp`]), configuration and wiring in [`config`],
//! file artifacts in [`export`].

pub mod config;
pub mod controller;
pub mod export;
pub mod gauss;
pub mod lp;
pub mod prs;
pub mod qp;
pub mod sets;
pub mod sim;
pub mod synthesis;
pub mod tightening;

pub use config::{Experiment, ExperimentConfig};
pub use controller::{Controller, ControllerConfig, InitMode, Variant};
pub use prs::{ChanceSpec, QuantileConvention, TubeSchedule};
pub use sets::{HPolytope, Zonotope};
pub use sim::{Metrics, SimConfig, SimRecord};
pub use synthesis::{CostWeights, Synthesis, SystemModel};
pub use tightening::TightenedSchedule;
