use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use motisim::config::{self, parse_config, FamilyName, RunConfig};
use motisim::experiments::{self, SweepConfig, SweepRow};
use motisim::motility::DEFAULT_SAMPLES;
use motisim::rundir::{self, RunDirectory};
use motisim::solver::{self, RunObserver, SimState};
use motisim::{Error, Field, Result};

/// Simulator and verification harness for signal-dependent motility systems.
#[derive(Parser)]
#[command(name = "motisim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration into a run directory.
    Run { config: PathBuf },
    /// Run the critical-mass sweep described by the `[sweep]` section.
    Sweep { config: PathBuf },
    /// Check the structural assumptions of a motility family on a sample lattice.
    CheckMotility {
        family: FamilyName,
        /// Exponent of the power family.
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        floor: Option<f64>,
        /// CSV table `s,gamma` for the tabulated family.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 1e3)]
        s_max: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        /// Relaxation time used to pick the anchor.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Solve the stationary problem of the `[stationary]` section.
    Stationary { config: PathBuf },
    /// Re-check a run directory from its stored files.
    Verify { run_dir: PathBuf },
}

enum Outcome {
    Ok,
    Violation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Sweep { config } => cmd_sweep(&config),
        Command::CheckMotility { family, k, scale, floor, table, s_max, samples, tau } => {
            cmd_check(family, k, scale, floor, table.as_deref(), s_max, samples, tau)
        }
        Command::Stationary { config } => cmd_stationary(&config),
        Command::Verify { run_dir } => cmd_verify(&run_dir),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_dir_for(cfg: &RunConfig, prefix: &str) -> PathBuf {
    let name = cfg
        .output
        .name
        .clone()
        .unwrap_or_else(|| format!("{prefix}-{}", &cfg.hash()[..12]));
    rundir::output_root(cfg).join(name)
}

fn cmd_run(path: &Path) -> Result<Outcome> {
    let cfg = parse_config(path)?;
    let dir = rundir::output_root(&cfg).join(rundir::run_name(&cfg));
    let (outcome, dir) = rundir::execute(&cfg, &dir)?;
    let last = outcome.records.last().expect("a run always records its initial state");
    println!("run directory: {}", dir.display());
    println!("steps: {}  t: {:e}", outcome.steps, last.t);
    println!("mass: {:.16e}  u_max: {:.6e}  F: {:.10e}", last.mass, last.u_max, last.lyapunov_f);
    if let Some(a) = &outcome.abort {
        println!("aborted: {a}");
    }
    Ok(Outcome::Ok)
}

fn cmd_sweep(path: &Path) -> Result<Outcome> {
    let cfg = parse_config(path)?;
    let section = cfg.sweep.clone().ok_or_else(|| Error::Validation {
        field: "sweep".into(),
        message: "section required for this command".into(),
    })?;
    let root = run_dir_for(&cfg, "sweep");
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.toml"), &cfg.source)?;
    let sweep = SweepConfig {
        domain: cfg.domain.clone(),
        datum: cfg.sweep_datum()?,
        settings: cfg.run_settings(),
        tau: cfg.time.tau,
        workers: section.workers,
    };
    let factory = |i: usize, mass: f64| -> Result<Box<dyn RunObserver>> {
        let row_cfg = cfg.for_sweep_row(mass)?;
        Ok(Box::new(RunDirectory::create(&root.join(format!("row_{i:03}")), &row_cfg)?))
    };
    let rows = experiments::critical_mass_sweep(&section.masses, &sweep, &factory)?;
    let mut table = format!("# run_hash={}\n{}\n", cfg.hash(), SweepRow::CSV_HEADER);
    for row in &rows {
        table.push_str(&row.to_csv_row());
        table.push('\n');
        let verdict = row.verdict.map_or_else(|| "-".to_owned(), |v| v.to_string());
        match &row.error {
            Some(e) => println!("mass {:.6}: {verdict} (error: {e})", row.mass),
            None => println!(
                "mass {:.6}: {verdict}  u_max_final {:.4e}",
                row.mass,
                row.u_max_final.unwrap_or(f64::NAN)
            ),
        }
    }
    fs::write(root.join("sweep.csv"), table)?;
    if !experiments::sweep_is_monotone(&rows) {
        println!("warning: a bounded verdict lies above a growing one");
    }
    println!("sweep directory: {}", root.display());
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn cmd_check(
    family: FamilyName,
    k: Option<f64>,
    scale: f64,
    floor: Option<f64>,
    table: Option<&Path>,
    s_max: f64,
    samples: usize,
    tau: f64,
) -> Result<Outcome> {
    let m = config::build_motility(family, k, table, scale, floor, None)?;
    let report = m.check_assumptions(s_max, samples)?;
    println!("{report}");
    println!("gamma({s_max:e}) = {:.6e}", report.gamma_inf_upper);
    match m.choose_anchor(tau) {
        Ok(a) => println!("anchor for tau = {tau}: a = {a:.12e}"),
        Err(e) => println!("anchor for tau = {tau}: none ({e})"),
    }
    Ok(Outcome::Ok)
}

fn cmd_stationary(path: &Path) -> Result<Outcome> {
    let cfg = parse_config(path)?;
    let section = cfg.stationary.clone().ok_or_else(|| Error::Validation {
        field: "stationary".into(),
        message: "section required for this command".into(),
    })?;
    let grid = cfg.build_grid()?;
    let init = cfg.stationary_init(&grid)?;
    let sol = experiments::stationary_solve(section.mass, &init, section.damping)?;
    let dir = run_dir_for(&cfg, "stationary");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), &cfg.source)?;
    sol.u_s.write_csv(&dir.join("u_s.csv"))?;
    sol.v_s.write_csv(&dir.join("v_s.csv"))?;
    println!("iterations: {}  residual: {:.3e}  F: {:.12e}", sol.iterations, sol.residual, sol.lyapunov_f);

    let mut summary = json!({
        "run_hash": cfg.hash(),
        "mass": sol.mass,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "lyapunov_F": sol.lyapunov_f,
    });
    if section.compare {
        let (u0, v0) = match cfg.initial {
            Some(_) => cfg.build_initial(&grid)?,
            None => {
                let v0 = solver::helmholtz_solve(&init)?;
                (Field::new(grid.clone(), init.values().to_vec())?, v0)
            }
        };
        let state = SimState::new(u0, v0, cfg.time.tau)?;
        let mut rd = RunDirectory::create(&dir.join("evolution"), &cfg)?;
        let out = solver::run(state, &cfg.build_motility()?, &cfg.run_settings(), &mut rd)?;
        rd.on_complete(&out)?;
        let du = out.final_state.u.distance_sup(&sol.u_s);
        let dv = out.final_state.v.distance_sup(&sol.v_s);
        println!("evolution to t = {:e}: |u - u_s|_inf = {du:.3e}  |v - v_s|_inf = {dv:.3e}", out.final_state.t);
        summary["compare"] = json!({ "t": out.final_state.t, "linf_u": du, "linf_v": dv });
    }
    fs::write(dir.join("stationary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("output: {}", dir.display());
    Ok(Outcome::Ok)
}

fn cmd_verify(dir: &Path) -> Result<Outcome> {
    let report = rundir::verify(dir)?;
    println!("records: {}  snapshots: {}", report.records, report.snapshots);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    if report.ok() {
        println!("ok");
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Violation)
    }
}
