use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motisim::diagnostics::parse_csv;

const CONSTANT: &str = r#"
[domain]
kind = "disk-radial"
extent = [1.0]
resolution = [32]

[motility]
family = "exp-decay"

[time]
dt = 0.05
t_end = 1.0
cadence = 5

[initial]
kind = "constants"
u = 2.0
v = 2.0

[output]
snapshot_every = 10
"#;

fn motisim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motisim"))
        .args(args)
        .env("MOTISIM_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_constant(tmp: &Path) -> PathBuf {
    let cfg = tmp.join("constant.toml");
    fs::write(&cfg, CONSTANT).unwrap();
    let out = motisim(&tmp.join("runs"), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut dirs: Vec<PathBuf> = fs::read_dir(tmp.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

#[test]
fn check_motility_reports_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = stdout(&motisim(tmp.path(), &["check-motility", "exp-decay"]));
    assert!(exp.contains("A0 ✓ A1 ✓"), "{exp}");
    assert!(exp.contains("A3 ✗"), "{exp}");
    let p1 = stdout(&motisim(tmp.path(), &["check-motility", "power", "--k", "1"]));
    assert!(p1.contains("A3 ✓"), "{p1}");
    let p2 = stdout(&motisim(tmp.path(), &["check-motility", "power", "--k", "2"]));
    assert!(p2.contains("A3 ✗"), "{p2}");
}

#[test]
fn run_on_constant_state_is_flat_and_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_constant(tmp.path());
    for f in ["config.toml", "diagnostics.csv", "diagnostics.jsonl", "manifest.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let (hash, records) = parse_csv(&fs::read_to_string(dir.join("diagnostics.csv")).unwrap()).unwrap();
    assert!(hash.is_some());
    assert_eq!(records.first().unwrap().step, 0);
    assert_eq!(records.last().unwrap().step, 20);
    let m0 = records[0].mass;
    for r in &records {
        assert!((r.mass - m0).abs() <= 1e-12 * m0);
        assert!((r.u_max - 2.0).abs() < 1e-12 && (r.u_min - 2.0).abs() < 1e-12);
        assert!((r.lyapunov_f - records[0].lyapunov_f).abs() < 1e-10);
    }
    let verify = motisim(tmp.path(), &["verify", dir.to_str().unwrap()]);
    assert_eq!(verify.status.code(), Some(0), "{}", stdout(&verify));
}

#[test]
fn identical_configs_give_identical_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = run_constant(a.path());
    let db = run_constant(b.path());
    assert_eq!(da.file_name(), db.file_name());
    assert_eq!(fs::read(da.join("diagnostics.csv")).unwrap(), fs::read(db.join("diagnostics.csv")).unwrap());
}

#[test]
fn verify_flags_tampered_mass_column() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_constant(tmp.path());
    let path = dir.join("diagnostics.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let last = lines.len() - 1;
    let mut cols: Vec<String> = lines[last].split(',').map(str::to_owned).collect();
    let mass: f64 = cols[2].parse().unwrap();
    cols[2] = format!("{:.16e}", mass * 1.01);
    lines[last] = cols.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = motisim(tmp.path(), &["verify", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stdout(&out));
    assert!(stdout(&out).contains("violation"));
}

#[test]
fn invalid_config_exits_with_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, CONSTANT.replace("dt = 0.05", "dt = 2.0")).unwrap();
    let out = motisim(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));

    fs::write(&cfg, CONSTANT.replace("[time]", "[time]\nbogus = 1")).unwrap();
    let out = motisim(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stationary_command_writes_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("stationary.toml");
    let text = r#"
[domain]
kind = "interval"
extent = [1.0]
resolution = [64]

[time]
dt = 0.1
t_end = 1.0

[stationary]
mass = 5.0
"#;
    fs::write(&cfg, text).unwrap();
    let out = motisim(tmp.path(), &["stationary", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).find(|p| p.is_dir()).unwrap();
    for f in ["u_s.csv", "v_s.csv", "stationary.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
}
