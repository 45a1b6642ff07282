//! Command-line front end: offline set computation, single closed-loop
//! simulations, Monte Carlo tables and the initialization-method comparison.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 a simulated run
//! hit an infeasible instant, 3 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stmpc::config::{ConfigError, Experiment, ExperimentConfig};
use stmpc::controller::{ControlError, InitMode, Variant};
use stmpc::export;
use stmpc::sim::{self, Metrics, SimConfig};
use stmpc::tightening::check_axioms;

#[derive(Parser)]
#[command(
    name = "stmpc",
    about = "Probabilistic tube-based stochastic MPC: offline sets, closed-loop simulation, Monte Carlo tables",
    after_help = "Exit codes: 0 success, 1 config error, 2 infeasible run, 3 solver error.\n\
                  STMPC_THREADS caps the worker count for Monte Carlo batches."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Path to the experiment JSON
    #[arg(long, value_name = "PATH", conflicts_with = "paper_example")]
    config: Option<PathBuf>,
    /// Use the built-in running-example configuration
    #[arg(long)]
    paper_example: bool,
    /// Override the simulation seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out)
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the offline sets (tubes, tightenings, terminal set) and write
    /// them with the axiom-check report
    Sets(ConfigSource),
    /// Run closed-loop simulations and export trajectory and tube-polygon data
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        /// Number of runs to simulate
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Monte Carlo statistics per controller variant (feasibility and
    /// violation tables)
    Montecarlo {
        #[command(flatten)]
        source: ConfigSource,
        /// Comma-separated variant list, or "all"
        #[arg(long, default_value = "all")]
        variants: String,
    },
    /// Compare the four initialization strategies on the time-varying scheme
    CompareInit(ConfigSource),
}

fn load_config(source: &ConfigSource) -> Result<ExperimentConfig, String> {
    let mut cfg = if source.paper_example {
        ExperimentConfig::paper_example()
    } else {
        let path = source
            .config
            .as_ref()
            .ok_or_else(|| "either --config PATH or --paper-example is required".to_string())?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?
    };
    if let Some(seed) = source.seed {
        cfg.sim.seed = seed;
    }
    Ok(cfg)
}

fn parse_variants(list: &str) -> Result<Vec<Variant>, String> {
    if list == "all" {
        return Ok(Variant::all().to_vec());
    }
    list.split(',').map(|s| s.trim().parse::<Variant>()).collect()
}

fn exit_code_for(err: &ConfigError) -> ExitCode {
    match err {
        ConfigError::Control(ControlError::Solver(_))
        | ConfigError::Control(ControlError::Accuracy { .. }) => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("STMPC_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder.build().expect("thread pool")
}

fn cmd_sets(source: &ConfigSource) -> ExitCode {
    let cfg = match load_config(source) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let exp = match Experiment::build(cfg) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let axioms = match check_axioms(&exp.sets.xf, &exp.syn, &exp.weights, &exp.sets.cbar, &exp.sets.vbar)
    {
        Ok(a) => a,
        Err(e) => return fail(&format!("axiom check failed: {e}")),
    };
    let path = source.out.join("sets.json");
    if let Err(e) = export::write(&path, &export::sets_json(&exp, &axioms)) {
        return fail(&format!("cannot write {}: {e}", path.display()));
    }
    println!(
        "sets written to {} (kmax={}, mrpi s={}, alpha={:.6}, axioms pass={})",
        path.display(),
        exp.tubes.kmax,
        exp.tubes.mrpi_s,
        exp.tubes.mrpi_alpha,
        axioms.pass()
    );
    if exp.sets.over_approximated {
        println!("note: generator merging over-approximated an initial tube cross-section");
    }
    ExitCode::SUCCESS
}

fn cmd_simulate(source: &ConfigSource, runs: usize) -> ExitCode {
    let cfg = match load_config(source) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let exp = match Experiment::build(cfg) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let controller = match exp.controller() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let env = exp.sim_env();
    let sim_cfg = SimConfig { n_s: runs, ..exp.config.sim.clone() };
    let pool = thread_pool();
    let result = pool.install(|| sim::monte_carlo(&controller, &env, &sim_cfg));
    let (metrics, records) = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let n = controller.state_dim();
    let m = controller.input_dim();
    let mut ok = export::write(&source.out.join("trajectory.csv"), &export::runs_csv(&records, n, m));
    if ok.is_ok() {
        match export::tube_polygons_csv(&records, &controller) {
            Ok(text) => ok = export::write(&source.out.join("tubes.csv"), &text),
            Err(e) => println!("note: tube polygons skipped ({e})"),
        }
    }
    if ok.is_ok() {
        ok = export::write(
            &source.out.join("violations.csv"),
            &export::violation_counts_csv(&metrics),
        );
    }
    if let Err(e) = ok {
        return fail(&format!("cannot write outputs: {e}"));
    }
    let infeasible = records.iter().filter(|r| !r.completed).count();
    println!(
        "{} run(s) of {} steps: feasible {}, infeasible {}; outputs in {}",
        runs,
        sim_cfg.n_sim,
        runs - infeasible,
        infeasible,
        source.out.display()
    );
    if infeasible > 0 {
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}

fn run_variant_batch(
    exp: &Experiment,
    variants: &[Variant],
    pool: &rayon::ThreadPool,
) -> Result<Vec<Metrics>, String> {
    let env = exp.sim_env();
    let mut all = Vec::new();
    for &variant in variants {
        let controller = exp
            .controller_for(variant, InitMode::Flexible)
            .map_err(|e| e.to_string())?;
        let (metrics, _) = pool
            .install(|| sim::monte_carlo(&controller, &env, &exp.config.sim))
            .map_err(|e| e.to_string())?;
        all.push(metrics);
    }
    Ok(all)
}

fn cmd_montecarlo(source: &ConfigSource, variants: &str) -> ExitCode {
    let cfg = match load_config(source) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let variants = match parse_variants(variants) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let exp = match Experiment::build(cfg) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let pool = thread_pool();
    let all = match run_variant_batch(&exp, &variants, &pool) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let table = export::metrics_table(&all);
    print!("{table}");
    if let Err(e) = export::write(&source.out.join("metrics.json"), &export::metrics_json(&all)) {
        return fail(&format!("cannot write metrics: {e}"));
    }
    if let Err(e) = export::write(&source.out.join("table.txt"), &table) {
        return fail(&format!("cannot write table: {e}"));
    }
    println!("metrics written to {}", source.out.join("metrics.json").display());
    ExitCode::SUCCESS
}

fn cmd_compare_init(source: &ConfigSource) -> ExitCode {
    let cfg = match load_config(source) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let exp = match Experiment::build(cfg) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let env = exp.sim_env();
    let pool = thread_pool();
    let mut all = Vec::new();
    for mode in InitMode::all_cases() {
        let controller = match exp.controller_for(Variant::TimeVarying, mode) {
            Ok(c) => c,
            Err(e) => return fail(&e.to_string()),
        };
        let result = pool.install(|| sim::monte_carlo(&controller, &env, &exp.config.sim));
        match result {
            Ok((mut metrics, _)) => {
                metrics.variant = mode.case_name().to_string();
                all.push(metrics);
            }
            Err(e) => return fail(&e.to_string()),
        }
    }
    let table = export::metrics_table(&all);
    print!("{table}");
    if let Err(e) = export::write(&source.out.join("compare_init.json"), &export::metrics_json(&all))
    {
        return fail(&format!("cannot write report: {e}"));
    }
    if let Err(e) = export::write(&source.out.join("compare_init.txt"), &table) {
        return fail(&format!("cannot write table: {e}"));
    }
    ExitCode::SUCCESS
}

fn fail(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Sets(source) => cmd_sets(source),
        Command::Simulate { source, runs } => cmd_simulate(source, *runs),
        Command::Montecarlo { source, variants } => cmd_montecarlo(source, variants),
        Command::CompareInit(source) => cmd_compare_init(source),
    }
}
