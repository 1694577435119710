//! Self-describing run directories and their verification.
//!
//! Layout:
//!
//! ```text
//! <run>/config.toml         verbatim config
//! <run>/manifest.json       hash, parsed config, outcome, snapshot index
//! <run>/diagnostics.csv     one row per record, `# run_hash=` first
//! <run>/diagnostics.jsonl   the same records as JSON lines
//! <run>/snapshots/u_<step>.csv, v_<step>.csv
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{parse_config_str, RunConfig};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::solver::{self, RunObserver, RunOutcome, SimState};

/// Environment variable that overrides the output root of every command.
pub const OUT_ENV: &str = "MOTISIM_OUT";
/// Relative mass drift tolerated by [`verify`].
pub const MASS_TOLERANCE: f64 = 1e-9;
const RECOMPUTE_TOLERANCE: f64 = 1e-10;

/// Output root: `$MOTISIM_OUT` if set, else the configured directory.
pub fn output_root(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ if cfg.output.dir.is_absolute() => cfg.output.dir.clone(),
        _ => cfg.base_dir.join(&cfg.output.dir),
    }
}

/// Directory name: configured name, else `run-<first 12 hex digits of the hash>`.
pub fn run_name(cfg: &RunConfig) -> String {
    cfg.output.name.clone().unwrap_or_else(|| format!("run-{}", &cfg.hash()[..12]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: usize,
    pub t: f64,
    pub u: String,
    pub v: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub run_hash: String,
    pub config: serde_json::Value,
    pub motility: String,
    pub anchor: Option<f64>,
    pub k_used: Option<f64>,
    pub v_star: Option<f64>,
    pub steps: usize,
    pub abort_reason: Option<String>,
    pub wall_time_s: f64,
    pub snapshots: Vec<SnapshotEntry>,
}

/// Streams records and snapshots of one run into its directory.
pub struct RunDirectory {
    dir: PathBuf,
    hash: String,
    config: serde_json::Value,
    started: Instant,
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
    snapshots: Vec<SnapshotEntry>,
}

impl RunDirectory {
    /// Creates (or reuses) `dir` and writes the config echo.
    pub fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir.join("snapshots"))?;
        fs::write(dir.join("config.toml"), &cfg.source)?;
        let hash = cfg.hash();
        let mut csv = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
        writeln!(csv, "# run_hash={hash}")?;
        writeln!(csv, "{}", DiagnosticsRecord::csv_header())?;
        let jsonl = BufWriter::new(File::create(dir.join("diagnostics.jsonl"))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            config: serde_json::to_value(cfg)?,
            started: Instant::now(),
            csv,
            jsonl,
            snapshots: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }
}

impl RunObserver for RunDirectory {
    /// Flushes the streams and writes `manifest.json`.
    fn on_complete(&mut self, outcome: &RunOutcome) -> Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        let manifest = Manifest {
            run_hash: self.hash.clone(),
            config: self.config.clone(),
            motility: outcome.motility.family().name().to_owned(),
            anchor: outcome.motility.anchor(),
            k_used: outcome.comparison.as_ref().map(|c| c.k),
            v_star: outcome.comparison.as_ref().map(|c| c.v_star),
            steps: outcome.steps,
            abort_reason: outcome.abort.as_ref().map(ToString::to_string),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            snapshots: self.snapshots.clone(),
        };
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    fn on_record(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.csv, "{}", record.to_csv_row())?;
        writeln!(self.jsonl, "{}", record.to_json_line(&self.hash)?)?;
        Ok(())
    }

    fn on_snapshot(&mut self, state: &SimState) -> Result<()> {
        if self.snapshots.last().is_some_and(|s| s.step == state.step_index) {
            return Ok(());
        }
        let u = format!("snapshots/u_{:08}.csv", state.step_index);
        let v = format!("snapshots/v_{:08}.csv", state.step_index);
        state.u.write_csv(&self.dir.join(&u))?;
        state.v.write_csv(&self.dir.join(&v))?;
        self.snapshots.push(SnapshotEntry { step: state.step_index, t: state.t, u, v });
        Ok(())
    }
}

/// Runs `cfg` from its initial data into `dir`.
pub fn execute(cfg: &RunConfig, dir: &Path) -> Result<(RunOutcome, PathBuf)> {
    let grid = cfg.build_grid()?;
    let motility = cfg.build_motility()?;
    let (u0, v0) = cfg.build_initial(&grid)?;
    let state = SimState::new(u0, v0, cfg.time.tau)?;
    let mut rd = RunDirectory::create(dir, cfg)?;
    let outcome = solver::run(state, &motility, &cfg.run_settings(), &mut rd)?;
    rd.on_complete(&outcome)?;
    Ok((outcome, dir.to_path_buf()))
}

/// Findings of [`verify`]. Violations break an invariant of the scheme or
/// the integrity of the directory; warnings flag bounds the run did not meet.
#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub records: usize,
    pub snapshots: usize,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

/// Re-checks a run directory using only its own contents.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let cfg_text = fs::read_to_string(dir.join("config.toml"))?;
    let cfg = parse_config_str(&cfg_text, dir, false)?;
    let hash = cfg.hash();

    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.run_hash != hash {
        report.violations.push("manifest hash does not match the config echo".into());
    }

    let csv_path = dir.join("diagnostics.csv");
    let (csv_hash, records) =
        diagnostics::parse_csv(&fs::read_to_string(&csv_path)?).map_err(|m| format_err(&csv_path, m))?;
    if csv_hash.as_deref() != Some(hash.as_str()) {
        report.violations.push("diagnostics.csv hash does not match the config echo".into());
    }
    report.records = records.len();
    if records.is_empty() {
        report.violations.push("no diagnostics records".into());
        return Ok(report);
    }

    let jsonl_path = dir.join("diagnostics.jsonl");
    let jsonl = fs::read_to_string(&jsonl_path)?;
    let json_lines: Vec<&str> = jsonl.lines().filter(|l| !l.trim().is_empty()).collect();
    if json_lines.len() != records.len() {
        report.violations.push(format!(
            "diagnostics.jsonl has {} lines, diagnostics.csv {} rows",
            json_lines.len(),
            records.len()
        ));
    }
    for (line, rec) in json_lines.iter().zip(&records) {
        let value: serde_json::Value = serde_json::from_str(line)?;
        if value["run_hash"] != hash.as_str() {
            report.violations.push(format!("jsonl record at step {} carries a foreign hash", rec.step));
        }
        for (key, x) in [("t", rec.t), ("mass", rec.mass), ("lyapunov_F", rec.lyapunov_f), ("u_max", rec.u_max)] {
            if value[key].as_f64() != Some(x) {
                report.violations.push(format!("csv and jsonl disagree on {key} at step {}", rec.step));
            }
        }
    }

    check_records(&records, &cfg, &mut report);
    check_snapshots(dir, &cfg, &manifest, &records, &mut report)?;
    Ok(report)
}

fn check_records(records: &[DiagnosticsRecord], cfg: &RunConfig, report: &mut VerifyReport) {
    let m0 = records[0].mass;
    if !(m0 > 0.0) {
        report.violations.push(format!("initial mass {m0} is not positive"));
    }
    for pair in records.windows(2) {
        if !(pair[1].t > pair[0].t) {
            report.violations.push(format!("time not increasing at step {}", pair[1].step));
        }
    }
    for r in records {
        if !((r.mass - m0).abs() <= MASS_TOLERANCE * m0.abs()) {
            report.violations.push(format!("mass {} at step {} drifts from {m0}", r.mass, r.step));
        }
        if r.u_min < -solver::POSITIVITY_TOLERANCE || r.v_min < -solver::POSITIVITY_TOLERANCE {
            report.violations.push(format!("negative density at step {}", r.step));
        }
        for (name, m) in [("w", r.w_bound_margin), ("v", r.v_bound_margin)] {
            if m.is_some_and(|m| m < -1e-8) {
                report.warnings.push(format!("{name}-bound margin {} at step {}", m.unwrap(), r.step));
            }
        }
    }
    if cfg.motility.family == crate::config::FamilyName::ExpDecay {
        for pair in records.windows(2) {
            let tol = 1e-6 * (1.0 + pair[0].lyapunov_f.abs());
            if pair[1].lyapunov_f > pair[0].lyapunov_f + tol {
                report.warnings.push(format!("Lyapunov functional increased at step {}", pair[1].step));
            }
        }
    }
}

fn check_snapshots(
    dir: &Path,
    cfg: &RunConfig,
    manifest: &Manifest,
    records: &[DiagnosticsRecord],
    report: &mut VerifyReport,
) -> Result<()> {
    let grid: Arc<Grid> = cfg.build_grid()?;
    for snap in &manifest.snapshots {
        let u = Field::read_csv(grid.clone(), &dir.join(&snap.u))?;
        let v = Field::read_csv(grid.clone(), &dir.join(&snap.v))?;
        report.snapshots += 1;
        let Some(rec) = records.iter().find(|r| r.step == snap.step) else {
            continue;
        };
        let mut state = SimState::new(u, v, cfg.time.tau)?;
        state.t = snap.t;
        state.step_index = snap.step;
        let checks = [
            ("mass", state.mass(), rec.mass),
            ("lyapunov_F", diagnostics::lyapunov(&state), rec.lyapunov_f),
            ("u_max", state.u.max(), rec.u_max),
            ("v_max", state.v.max(), rec.v_max),
            ("w_max", state.w.max(), rec.w_max),
            ("t", state.t, rec.t),
        ];
        for (name, recomputed, stored) in checks {
            if !close(recomputed, stored, RECOMPUTE_TOLERANCE) {
                report.violations.push(format!(
                    "{name} at step {} is {stored} in diagnostics but {recomputed} from the snapshot",
                    snap.step
                ));
            }
        }
    }
    Ok(())
}
