//! Artifact writers: run CSVs, metrics JSON, tube-polygon plot data and the
//! offline sets file. All output is deterministic for a given input.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::Experiment;
use crate::controller::Controller;
use crate::prs::TubeSchedule;
use crate::sim::{Metrics, SimRecord};
use crate::tightening::{AxiomReport, TightenedSchedule};

#[derive(Debug)]
pub enum ExportError {
    Io(std::io::Error),
    Unsupported(String),
}

impl std::fmt::Display for ExportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExportError::Io(e) => write!(f, "io error: {e}"),
            ExportError::Unsupported(s) => write!(f, "{s}"),
        }
    }
}

impl std::error::Error for ExportError {}

impl From<std::io::Error> for ExportError {
    fn from(e: std::io::Error) -> Self {
        ExportError::Io(e)
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation keeps files byte-stable
    format!("{v}")
}

/// One row per run per step: run_id, t, state, input, slack and flags.
pub fn runs_csv(records: &[SimRecord], n: usize, m: usize) -> String {
    let mut out = String::new();
    out.push_str("run_id,t");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    if m == 1 {
        out.push_str(",u");
    } else {
        for j in 1..=m {
            let _ = write!(out, ",u{j}");
        }
    }
    out.push_str(",lambda,feasible,x_viol,u_viol,in_Z\n");
    for rec in records {
        for t in 0..rec.feasible.len() {
            let _ = write!(out, "{},{t}", rec.run_id);
            if rec.feasible[t] {
                for v in &rec.x[t] {
                    let _ = write!(out, ",{}", fmt_f64(*v));
                }
                for v in &rec.u[t] {
                    let _ = write!(out, ",{}", fmt_f64(*v));
                }
                let _ = write!(
                    out,
                    ",{},1,{},{},{}\n",
                    fmt_f64(rec.lambda[t]),
                    u8::from(rec.x_violation[t]),
                    u8::from(rec.u_violation[t]),
                    u8::from(rec.in_z[t]),
                );
            } else {
                for v in &rec.x[t] {
                    let _ = write!(out, ",{}", fmt_f64(*v));
                }
                for _ in 0..m {
                    out.push(',');
                }
                out.push_str(",,0,,,\n");
            }
        }
    }
    out
}

/// Nominal trajectory plus the initial-tube cross-section polygon per step
/// (2-D systems): the content behind the trajectory figures.
pub fn tube_polygons_csv(
    records: &[SimRecord],
    controller: &Controller,
) -> Result<String, ExportError> {
    if controller.state_dim() != 2 {
        return Err(ExportError::Unsupported(
            "tube polygon export is defined for 2-D state spaces".into(),
        ));
    }
    let mut out = String::from("run_id,t,vertex,x1,x2,s0_1,s0_2\n");
    for rec in records {
        for t in 0..rec.s0.len() {
            let s0 = nalgebra::DVector::from_vec(rec.s0[t].clone());
            let tube = if controller.cfg.variant.is_constant() {
                controller.tubes.z_set.clone()
            } else {
                controller.tubes.d_at(t).clone()
            };
            let tube = tube
                .scale(rec.lambda[t])
                .expect("lambda >= 1")
                .minkowski_sum(&crate::sets::Zonotope::point(&s0))
                .expect("dimensions agree");
            let verts = tube
                .vertices_2d()
                .map_err(|e| ExportError::Unsupported(format!("vertex walk failed: {e}")))?;
            for (i, v) in verts.iter().enumerate() {
                let _ = write!(
                    out,
                    "{},{t},{i},{},{},{},{}\n",
                    rec.run_id,
                    fmt_f64(v[0]),
                    fmt_f64(v[1]),
                    fmt_f64(s0[0]),
                    fmt_f64(s0[1]),
                );
            }
        }
    }
    Ok(out)
}

/// Violation counts per time instant: the content behind the violation
/// figures.
pub fn violation_counts_csv(metrics: &Metrics) -> String {
    let mut out = String::from("instant,r_v_state,r_v_input\n");
    for (t, (rv, ru)) in metrics.r_v.iter().zip(&metrics.r_v_input).enumerate() {
        let _ = writeln!(out, "{},{},{}", t + 1, fmt_f64(*rv), fmt_f64(*ru));
    }
    out
}

/// Text table in the layout of the reported comparisons.
pub fn metrics_table(all: &[Metrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}",
        "algorithm", "r_f", "r_bar", "r_max", "r_min", "term_in_Z", "time(s)");
    for m in all {
        let _ = writeln!(
            out,
            "{:<14} {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}% {:>9.2}% {:>10.1}",
            m.variant, m.r_f, m.r_bar, m.r_max, m.r_min, m.terminal_in_z, m.wall_time_s
        );
    }
    out
}

/// The offline artifact for the `sets` subcommand.
#[derive(Debug, Serialize)]
pub struct SetsArtifact<'a> {
    pub alpha: f64,
    pub kmax: usize,
    pub mrpi_s: usize,
    pub mrpi_alpha: f64,
    pub over_approximated: bool,
    pub tubes: &'a TubeSchedule,
    pub tightened: &'a TightenedSchedule,
    pub axioms: &'a AxiomReport,
}

pub fn sets_json(exp: &Experiment, axioms: &AxiomReport) -> String {
    let artifact = SetsArtifact {
        alpha: exp.tubes.alpha,
        kmax: exp.tubes.kmax,
        mrpi_s: exp.tubes.mrpi_s,
        mrpi_alpha: exp.tubes.mrpi_alpha,
        over_approximated: exp.sets.over_approximated,
        tubes: &exp.tubes,
        tightened: &exp.sets,
        axioms,
    };
    serde_json::to_string_pretty(&artifact).expect("sets artifact serializes")
}

pub fn metrics_json(all: &[Metrics]) -> String {
    serde_json::to_string_pretty(all).expect("metrics serialize")
}

pub fn write(path: &Path, content: &str) -> Result<(), ExportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::sim::{monte_carlo, SimConfig};

    #[test]
    fn csv_headers_match_contract() {
        let cfg = ExperimentConfig::paper_example();
        let exp = Experiment::build(cfg).unwrap();
        let ctrl = exp.controller().unwrap();
        let env = exp.sim_env();
        let sim = SimConfig { n_s: 2, n_sim: 3, ..exp.config.sim.clone() };
        let (m, recs) = monte_carlo(&ctrl, &env, &sim).unwrap();
        let csv = runs_csv(&recs, 2, 1);
        assert!(csv.starts_with("run_id,t,x1,x2,u,lambda,feasible,x_viol,u_viol,in_Z\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        let poly = tube_polygons_csv(&recs, &ctrl).unwrap();
        assert!(poly.starts_with("run_id,t,vertex,x1,x2,s0_1,s0_2\n"));
        let counts = violation_counts_csv(&m);
        assert_eq!(counts.lines().count(), 1 + 3);
    }
}
