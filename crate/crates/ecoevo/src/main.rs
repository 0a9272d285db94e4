//! Command-line frontend: scenario runs, epsilon sweeps, hypothesis
//! audits, the acceptance suite, and the bundled-scenario catalog.
//!
//! Exit codes: 0 success, 2 configuration error, 3 audit failure,
//! 4 numerical failure or extinction, 5 acceptance-suite failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ecoevo::acceptance::{run_criterion, CRITERIA};
use ecoevo::audit::{audit_predator_prey, audit_single};
use ecoevo::config::{load_scenario, BuiltScenario, ScenarioConfig, BUNDLED_SCENARIOS};
use ecoevo::error::EvoError;
use ecoevo::output::{
    execute_scenario, scaling_slopes, write_run_artifacts, write_scaling_csv, ScalingRow,
};
use ecoevo::stepper::ModelSpec;

#[derive(Parser)]
#[command(
    name = "ecoevo",
    version,
    about = "Trait-structured eco-evolutionary dynamics under the infinitesimal reproduction model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifact directory
    Run {
        /// Scenario file path or bundled scenario name
        #[arg(long)]
        config: String,
        /// Output directory (default: runs/<name>)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run even if the hypothesis audit fails
        #[arg(long)]
        force: bool,
        /// Override the scenario seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the scenario at every epsilon of its sweep list and fit the
    /// scaling slopes
    Sweep {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated epsilon list overriding the scenario
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel workers (default: one per epsilon, at most 4)
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Execute the acceptance suite and print one line per criterion
    Acceptance {
        /// Print the criterion inventory without running
        #[arg(long)]
        list: bool,
        /// Run only these criterion ids
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Check a scenario's hypotheses without running it
    Audit {
        #[arg(long)]
        config: String,
    },
    /// List the bundled scenarios
    ListScenarios,
}

fn exit_code_for(err: &EvoError) -> u8 {
    match err {
        EvoError::Config(_) | EvoError::Contract(_) => 2,
        EvoError::Audit(_) => 3,
        _ => 4,
    }
}

fn load_with_seed(config: &str, seed: Option<u64>) -> Result<ScenarioConfig, EvoError> {
    let mut cfg = load_scenario(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn single_epsilon(cfg: &ScenarioConfig) -> Result<f64, EvoError> {
    let list = cfg.epsilon_list()?;
    if list.len() > 1 {
        return Err(EvoError::Config(format!(
            "scenario '{}' defines an epsilon sweep; use the sweep command",
            cfg.name
        )));
    }
    Ok(list[0])
}

fn cmd_run(config: &str, out: Option<PathBuf>, force: bool, seed: Option<u64>) -> Result<u8, EvoError> {
    let cfg = load_with_seed(config, seed)?;
    let eps = single_epsilon(&cfg)?;
    let built = cfg.build(eps)?;
    let executed = execute_scenario(&built, force)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let manifest = write_run_artifacts(&dir, &built, &executed)?;

    let terminal = executed.run.terminal();
    println!("scenario {} (eps = {eps})", cfg.name);
    println!("  steps: {}, wall: {:.2}s", manifest.steps_executed, manifest.wall_seconds);
    println!(
        "  terminal: t = {:.3}, M1 = {:.6}, rho = {:.6}, M2c = {:.6e}, W1(q, ansatz) = {:.4e}",
        terminal.time, terminal.m1, terminal.rho, terminal.m2c, terminal.w1_to_gaussian
    );
    if let Some(x) = manifest.x_star {
        println!("  fixed point x* = {x:.8}");
    }
    println!("  artifacts: {}", dir.display());
    if let Some(t) = executed.run.extinction {
        eprintln!("ecoevo: population went extinct at t = {t:.4}");
        return Ok(4);
    }
    Ok(0)
}

fn cmd_sweep(
    config: &str,
    out: Option<PathBuf>,
    epsilons: Option<Vec<f64>>,
    force: bool,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<u8, EvoError> {
    let cfg = load_with_seed(config, seed)?;
    let list = match epsilons {
        Some(l) if !l.is_empty() => l,
        _ => cfg.epsilon_list()?,
    };
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_sweep", cfg.name)));
    std::fs::create_dir_all(&dir)?;

    let workers = threads.unwrap_or_else(|| list.len().min(4)).max(1);
    let mut rows: Vec<Option<ScalingRow>> = vec![None; list.len()];

    // one worker per run; artifacts land in per-epsilon subdirectories, so
    // the workers never share files
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in list
            .iter()
            .enumerate()
            .collect::<Vec<_>>()
            .chunks((list.len() + workers - 1) / workers)
        {
            let chunk: Vec<(usize, f64)> = chunk.iter().map(|(i, e)| (*i, **e)).collect();
            let cfg = &cfg;
            let dir = &dir;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                for (idx, eps) in chunk {
                    let row = run_sweep_member(cfg, eps, dir, force)
                        .unwrap_or_else(|e| ScalingRow::failed(eps, &e));
                    out.push((idx, row));
                }
                out
            }));
        }
        for handle in handles {
            for (idx, row) in handle.join().expect("sweep worker panicked") {
                rows[idx] = Some(row);
            }
        }
    });

    let rows: Vec<ScalingRow> = rows.into_iter().map(|r| r.expect("all members ran")).collect();
    write_scaling_csv(&dir, &rows)?;

    println!("sweep {} over {:?}", cfg.name, list);
    for row in &rows {
        println!(
            "  eps = {:<6} {:<8} m1_gap = {:.3e}  rho_gap = {:.3e}  sup_w1 = {:.3e}  m2c_gap = {:.3e}",
            row.epsilon, row.status, row.m1_gap, row.rho_gap, row.sup_w1, row.m2c_gap
        );
    }
    let slopes = scaling_slopes(&rows);
    if let (Some(m1), Some(rho)) = (slopes.m1, slopes.rho) {
        println!("  fitted slopes: m1 {m1:.3}, rho {rho:.3}");
    }
    println!("  artifacts: {}", dir.display());

    if rows.iter().all(|r| r.status != "ok") {
        return Err(EvoError::NoConvergence("every sweep member failed".into()));
    }
    Ok(0)
}

fn run_sweep_member(
    cfg: &ScenarioConfig,
    eps: f64,
    dir: &std::path::Path,
    force: bool,
) -> Result<ScalingRow, EvoError> {
    let built: BuiltScenario = cfg.build(eps)?;
    let executed = execute_scenario(&built, force)?;
    let sub = dir.join(format!("eps_{eps}"));
    write_run_artifacts(&sub, &built, &executed)?;
    ScalingRow::from_executed(&built, &executed)
}

fn cmd_acceptance(list: bool, only: Option<Vec<usize>>, seed: u64) -> Result<u8, EvoError> {
    if list {
        println!("acceptance criteria:");
        for (id, name, budget) in CRITERIA {
            println!("  {id:>2}  {name:<30} budget {budget:>5.0}s");
        }
        return Ok(0);
    }
    let ids: Vec<usize> = match only {
        Some(ids) => ids,
        None => (1..=CRITERIA.len()).collect(),
    };
    let mut all_pass = true;
    for id in ids {
        match run_criterion(id, seed) {
            Some(result) => {
                println!("{}", result.render());
                all_pass &= result.passed;
            }
            None => {
                return Err(EvoError::Config(format!("no acceptance criterion with id {id}")));
            }
        }
    }
    Ok(if all_pass { 0 } else { 5 })
}

fn cmd_audit(config: &str) -> Result<u8, EvoError> {
    let cfg = load_scenario(config)?;
    let eps = cfg.epsilon_list()?[0];
    let built = cfg.build(eps)?;
    let report = match &built.model {
        ModelSpec::Single(spec) => audit_single(spec, &built.grid, &built.audit),
        ModelSpec::PredatorPrey(spec) => audit_predator_prey(spec, &built.grid, &built.audit),
    };
    println!("audit of {} at eps = {eps}:", cfg.name);
    print!("{}", report.render());
    Ok(if report.passed() { 0 } else { 3 })
}

fn cmd_list_scenarios() -> Result<u8, EvoError> {
    for (name, text) in BUNDLED_SCENARIOS {
        let cfg = ScenarioConfig::from_toml(text)?;
        println!("{name:<24} {}", cfg.description);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, force, seed } => cmd_run(&config, out, force, seed),
        Command::Sweep { config, out, epsilons, force, seed, threads } => {
            cmd_sweep(&config, out, epsilons, force, seed, threads)
        }
        Command::Acceptance { list, only, seed } => cmd_acceptance(list, only, seed),
        Command::Audit { config } => cmd_audit(&config),
        Command::ListScenarios => cmd_list_scenarios(),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("ecoevo: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
