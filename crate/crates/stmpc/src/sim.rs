//! Closed-loop simulation and Monte Carlo batching with a splittable,
//! order-independent seeding scheme: run i draws from a ChaCha8 stream
//! seeded by splitmix64(master xor (i+1)*golden), so results do not depend
//! on how runs are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControlError, ControlHistory, Controller, SolveStatus};
use crate::sets::HPolytope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "N_sim")]
    pub n_sim: usize,
    #[serde(rename = "N_s")]
    pub n_s: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    #[serde(default = "default_avg_window")]
    pub avg_window: usize,
}

fn default_avg_window() -> usize {
    6
}

impl SimConfig {
    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }
}

/// Everything a closed-loop run needs besides the controller.
pub struct SimEnv<'a> {
    pub x_set: &'a HPolytope,
    pub u_set: &'a HPolytope,
    /// halfspace form of the mPPI set for the containment flags
    pub z_hrep: &'a HPolytope,
}

#[derive(Debug, Clone)]
pub enum SimError {
    Control(ControlError),
}

impl std::fmt::Display for SimError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimError::Control(e) => write!(f, "controller failed: {e}"),
        }
    }
}

impl std::error::Error for SimError {}

impl From<ControlError> for SimError {
    fn from(e: ControlError) -> Self {
        SimError::Control(e)
    }
}

/// Per-run record. Step t holds the pre-step state x_t, the solution and
/// input applied at t; `x_violation[t]` flags the state produced by that
/// step (x_{t+1} outside X), which is the chance-constrained quantity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimRecord {
    pub run_id: usize,
    /// x_0..x_T where T is the last controlled step + 1
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub s0: Vec<Vec<f64>>,
    pub v0: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub cost: Vec<f64>,
    pub feasible: Vec<bool>,
    pub x_violation: Vec<bool>,
    pub u_violation: Vec<bool>,
    pub in_z: Vec<bool>,
    pub completed: bool,
    pub infeasible_at: Option<usize>,
}

/// Table-ready aggregate ratios, all in percent. `wall_time_s` is carried
/// for the text reports but never serialized: the metrics JSON must be
/// byte-identical across reruns and thread counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub variant: String,
    pub n_s: usize,
    pub n_sim: usize,
    pub avg_window: usize,
    /// runs that stayed feasible through all instants
    pub r_f: f64,
    /// state-constraint violation ratio per time instant 1..=N_sim
    pub r_v: Vec<f64>,
    /// input-constraint violation ratio per step
    pub r_v_input: Vec<f64>,
    pub r_max: f64,
    pub r_min: f64,
    pub r_bar: f64,
    /// terminal error inside the mPPI set
    pub terminal_in_z: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// splitmix64 step, the documented per-run seed derivation.
pub fn sub_seed(master: u64, run_id: u64) -> u64 {
    let mut z = master ^ run_id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Zero-mean Gaussian sampler with covariance W: a diagonal square root for
/// diagonal W (the common case, bit-exact), the symmetric eigendecomposition
/// square root otherwise.
#[derive(Debug, Clone)]
pub struct DisturbanceSampler {
    factor: DMatrix<f64>,
}

impl DisturbanceSampler {
    pub fn new(w: &DMatrix<f64>) -> Self {
        let n = w.nrows();
        let mut off_diag = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off_diag = off_diag.max(w[(i, j)].abs());
                }
            }
        }
        let factor = if off_diag <= 1e-15 {
            DMatrix::from_fn(n, n, |i, j| if i == j { w[(i, i)].max(0.0).sqrt() } else { 0.0 })
        } else {
            let eig = w.clone().symmetric_eigen();
            let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
        };
        Self { factor }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.factor.nrows();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

/// Simulate one closed-loop run. Infeasibility of a non-enhanced instant
/// truncates the run (it still counts in the denominators up to that step).
pub fn run_closed_loop(
    controller: &Controller,
    env: &SimEnv<'_>,
    sim: &SimConfig,
    run_id: usize,
) -> Result<SimRecord, SimError> {
    let sampler = DisturbanceSampler::new(&controller.sys.w);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(sim.seed, run_id as u64));
    let mut x = sim.x0_vector();
    let mut hist = ControlHistory::default();
    let mut rec = SimRecord {
        run_id,
        x: vec![x.iter().copied().collect()],
        u: Vec::new(),
        s0: Vec::new(),
        v0: Vec::new(),
        lambda: Vec::new(),
        cost: Vec::new(),
        feasible: Vec::new(),
        x_violation: Vec::new(),
        u_violation: Vec::new(),
        in_z: Vec::new(),
        completed: false,
        infeasible_at: None,
    };
    for t in 0..sim.n_sim {
        let out = controller.step(&x, t, &hist)?;
        if out.sol.status != SolveStatus::Optimal {
            rec.feasible.push(false);
            rec.infeasible_at = Some(t);
            return Ok(rec);
        }
        let u = out.u.expect("optimal step carries an input");
        hist.update(&out.sol, t);
        let w = sampler.sample(&mut rng);
        let x_next = controller.sys.step(&x, &u, &w);

        rec.feasible.push(true);
        rec.u.push(u.iter().copied().collect());
        rec.s0.push(out.sol.s0.iter().copied().collect());
        rec.v0.push(out.sol.v[0].iter().copied().collect());
        rec.lambda.push(out.sol.lambda);
        rec.cost.push(out.sol.cost);
        rec.x_violation.push(!env.x_set.contains_point(&x_next, 1e-12));
        rec.u_violation.push(!env.u_set.contains_point(&u, 1e-12));
        rec.in_z.push(env.z_hrep.contains_point(&(&x - &out.sol.s0), 1e-9));
        x = x_next;
        rec.x.push(x.iter().copied().collect());
    }
    rec.completed = true;
    Ok(rec)
}

/// N_s independent runs with per-run sub-seeds; aggregation is a pure fold,
/// so the result is identical for any worker count.
pub fn monte_carlo(
    controller: &Controller,
    env: &SimEnv<'_>,
    sim: &SimConfig,
) -> Result<(Metrics, Vec<SimRecord>), SimError> {
    let start = std::time::Instant::now();
    let records: Result<Vec<SimRecord>, SimError> = (0..sim.n_s)
        .into_par_iter()
        .map(|run_id| run_closed_loop(controller, env, sim, run_id))
        .collect();
    let records = records?;
    let mut metrics = aggregate(&records, sim, controller.cfg.variant.name());
    metrics.wall_time_s = start.elapsed().as_secs_f64();
    Ok((metrics, records))
}

/// Ratios from the per-run flags. Denominator at step t is the number of
/// runs still under control at t.
pub fn aggregate(records: &[SimRecord], sim: &SimConfig, variant: &str) -> Metrics {
    let n_s = records.len();
    let mut r_v = vec![0.0f64; sim.n_sim];
    let mut r_v_input = vec![0.0f64; sim.n_sim];
    for t in 0..sim.n_sim {
        let controlled = records
            .iter()
            .filter(|r| r.infeasible_at.map_or(true, |i| t < i))
            .count();
        if controlled == 0 {
            continue;
        }
        let viol = records.iter().filter(|r| r.x_violation.get(t) == Some(&true)).count();
        let uviol = records.iter().filter(|r| r.u_violation.get(t) == Some(&true)).count();
        r_v[t] = 100.0 * viol as f64 / controlled as f64;
        r_v_input[t] = 100.0 * uviol as f64 / controlled as f64;
    }
    let n_feasible = records.iter().filter(|r| r.completed).count();
    let window = sim.avg_window.min(sim.n_sim);
    let r_max = r_v.iter().copied().fold(0.0, f64::max);
    let r_min = r_v[..window].iter().copied().fold(f64::INFINITY, f64::min);
    let r_bar = r_v[..window].iter().sum::<f64>() / window as f64;
    Metrics {
        variant: variant.to_string(),
        n_s,
        n_sim: sim.n_sim,
        avg_window: sim.avg_window,
        r_f: 100.0 * n_feasible as f64 / n_s as f64,
        r_v,
        r_v_input,
        r_max,
        r_min: if r_min.is_finite() { r_min } else { 0.0 },
        r_bar,
        terminal_in_z: terminal_containment(records),
        wall_time_s: 0.0,
    }
}

/// Fraction of runs whose last-step error x_{T-1} - s0_{T-1} lies in Z.
pub fn terminal_containment(records: &[SimRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records
        .iter()
        .filter(|r| r.completed && r.in_z.last() == Some(&true))
        .count();
    100.0 * hits as f64 / records.len() as f64
}
