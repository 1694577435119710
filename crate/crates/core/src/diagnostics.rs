//! Lyapunov functional, dissipation, key-identity residual, comparison
//! margins and the boundedness classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motility::{Family, Motility};
use crate::solver::{helmholtz_solve, SimState};

/// Floor applied inside the logarithm of the dissipation integrand.
pub const LOG_FLOOR: f64 = 1e-14;
/// Minimum number of records accepted by [`classify_boundedness`].
pub const MIN_RECORDS: usize = 50;
const SLOPE_EPS: f64 = 1e-9;

/// Scalars recorded at one time level. Quantities that are undefined for a
/// record (no previous state, unsupported family) are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    #[serde(rename = "lyapunov_F")]
    pub lyapunov_f: f64,
    #[serde(rename = "dissipation_D")]
    pub dissipation_d: Option<f64>,
    pub u_max: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub u_min: f64,
    pub v_min: f64,
    pub key_identity_residual: Option<f64>,
    pub w_bound_margin: Option<f64>,
    pub v_bound_margin: Option<f64>,
    #[serde(rename = "K_used")]
    pub k_used: Option<f64>,
    pub abort: Option<String>,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "step",
    "t",
    "mass",
    "lyapunov_F",
    "dissipation_D",
    "u_max",
    "v_max",
    "w_max",
    "u_min",
    "v_min",
    "key_identity_residual",
    "w_bound_margin",
    "v_bound_margin",
    "K_used",
    "abort",
];

fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

impl DiagnosticsRecord {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// One CSV row; non-finite and missing values are left empty.
    pub fn to_csv_row(&self) -> String {
        let abort = self.abort.as_deref().unwrap_or("").replace([',', '\n'], ";");
        [
            self.step.to_string(),
            fmt_real(self.t),
            fmt_real(self.mass),
            fmt_real(self.lyapunov_f),
            fmt_opt(self.dissipation_d),
            fmt_real(self.u_max),
            fmt_real(self.v_max),
            fmt_real(self.w_max),
            fmt_real(self.u_min),
            fmt_real(self.v_min),
            fmt_opt(self.key_identity_residual),
            fmt_opt(self.w_bound_margin),
            fmt_opt(self.v_bound_margin),
            fmt_opt(self.k_used),
            abort,
        ]
        .join(",")
    }

    /// Line-delimited JSON carrying the run hash; non-finite values become `null`.
    pub fn to_json_line(&self, run_hash: &str) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        value["run_hash"] = serde_json::Value::String(run_hash.to_owned());
        Ok(serde_json::to_string(&value)?)
    }

    pub fn from_csv_row(row: &str) -> std::result::Result<Self, String> {
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != CSV_COLUMNS.len() {
            return Err(format!("expected {} columns, found {}", CSV_COLUMNS.len(), cells.len()));
        }
        let opt = |i: usize| -> std::result::Result<Option<f64>, String> {
            let c = cells[i].trim();
            if c.is_empty() {
                Ok(None)
            } else {
                c.parse::<f64>().map(Some).map_err(|e| format!("{}: {e}", CSV_COLUMNS[i]))
            }
        };
        let req = |i: usize| -> std::result::Result<f64, String> {
            Ok(opt(i)?.unwrap_or(f64::NAN))
        };
        Ok(Self {
            step: cells[0].trim().parse().map_err(|e| format!("step: {e}"))?,
            t: req(1)?,
            mass: req(2)?,
            lyapunov_f: req(3)?,
            dissipation_d: opt(4)?,
            u_max: req(5)?,
            v_max: req(6)?,
            w_max: req(7)?,
            u_min: req(8)?,
            v_min: req(9)?,
            key_identity_residual: opt(10)?,
            w_bound_margin: opt(11)?,
            v_bound_margin: opt(12)?,
            k_used: opt(13)?,
            abort: Some(cells[14].trim()).filter(|s| !s.is_empty()).map(str::to_owned),
        })
    }
}

/// Renders a full diagnostics CSV: a `# run_hash=` line, the header, then rows.
pub fn write_csv(records: &[DiagnosticsRecord], run_hash: &str) -> String {
    let mut out = format!("# run_hash={run_hash}\n{}\n", DiagnosticsRecord::csv_header());
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Parses the output of [`write_csv`]; returns the run hash (if present) and records.
pub fn parse_csv(text: &str) -> std::result::Result<(Option<String>, Vec<DiagnosticsRecord>), String> {
    let mut hash = None;
    let mut records = Vec::new();
    let mut seen_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(h) = rest.trim().strip_prefix("run_hash=") {
                hash = Some(h.to_owned());
            }
            continue;
        }
        if !seen_header {
            if line != DiagnosticsRecord::csv_header() {
                return Err(format!("line {}: unexpected header", lineno + 1));
            }
            seen_header = true;
            continue;
        }
        records.push(DiagnosticsRecord::from_csv_row(line).map_err(|e| format!("line {}: {e}", lineno + 1))?);
    }
    if !seen_header {
        return Err("missing header".into());
    }
    Ok((hash, records))
}

/// `F = int u log u + |grad v|^2 / 2 + v^2 / 2 - u v`, with `0 log 0 = 0`.
pub fn lyapunov(state: &SimState) -> f64 {
    let grid = state.u.grid();
    let u = state.u.values();
    let v = state.v.values();
    let local: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&u, &v)| {
            let ent = if u > 0.0 { u * u.ln() } else { 0.0 };
            ent + 0.5 * v * v - u * v
        })
        .collect();
    grid.integrate(&local) + 0.5 * grid.grad_norm_sq(v)
}

fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let r = b / a - 1.0;
    if r.abs() < 1e-6 {
        // series of (b - a) / ln(b / a) around b = a
        a * (1.0 + r / 2.0 - r * r / 12.0)
    } else {
        (b - a) / (b / a).ln()
    }
}

/// `D = int u e^{-v} |grad log u - grad v|^2 + tau ||v_t||^2` for the
/// exponential motility `e^{-v}`.
///
/// The face weight is the logarithmic mean of `u e^{-v}` at the two ends,
/// which makes `D` the exact dissipation of the discrete flux.
pub fn dissipation(state: &SimState, v_prev: &[f64], dt: f64, m: &Motility) -> Result<f64> {
    if !matches!(m.family(), Family::ExpDecay) || m.scale() != 1.0 {
        return Err(Error::Unsupported("dissipation"));
    }
    let grid = state.u.grid();
    let u = state.u.values();
    let v = state.v.values();
    let mut flux_term = 0.0;
    for f in grid.faces() {
        let (ua, ub) = (u[f.a], u[f.b]);
        if ua < LOG_FLOOR || ub < LOG_FLOOR {
            continue;
        }
        let pa = ua.max(LOG_FLOOR).ln() - v[f.a];
        let pb = ub.max(LOG_FLOOR).ln() - v[f.b];
        let weight = log_mean(pa.exp(), pb.exp());
        flux_term += f.conductance * weight * (pb - pa).powi(2);
    }
    let vt: Vec<f64> = v.iter().zip(v_prev).map(|(a, b)| ((a - b) / dt).powi(2)).collect();
    Ok(flux_term + state.tau * grid.integrate(&vt))
}

/// `|| (w - w_prev)/dt + gamma(v) u - (I - L)^{-1}[gamma(v) u] ||_inf`.
pub fn key_identity_residual(state: &SimState, w_prev: &[f64], dt: f64, m: &Motility) -> Result<f64> {
    let gu: Vec<f64> = state
        .v
        .values()
        .iter()
        .zip(state.u.values())
        .map(|(&v, &u)| Ok(m.gamma(v)? * u))
        .collect::<Result<_>>()?;
    let gu_field = crate::grid::Field::from_vec_unchecked(state.u.grid().clone(), gu);
    let h = helmholtz_solve(&gu_field)?;
    Ok(state
        .w
        .values()
        .iter()
        .zip(w_prev)
        .zip(gu_field.values())
        .zip(h.values())
        .fold(0.0f64, |acc, (((w, wp), g), h)| acc.max(((w - wp) / dt + g - h).abs())))
}

/// Quantities fixed at run start for the two comparison bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonSetup {
    pub w0: Vec<f64>,
    pub v_star: f64,
    pub gamma_v_star: f64,
    pub anchor: f64,
    pub gamma_anchor: f64,
    pub tau: f64,
    pub k: f64,
}

impl ComparisonSetup {
    /// Requires `m` to carry an anchor with `tau gamma(a) < 1`.
    pub fn new(state0: &SimState, m: &Motility) -> Result<Self> {
        let anchor = m.anchor().ok_or(Error::NoAnchor)?;
        let tau = state0.tau;
        let gamma_anchor = m.gamma(anchor)?;
        if tau * gamma_anchor >= 1.0 {
            return Err(Error::param(
                "anchor",
                format!("tau * gamma(a) = {} must be below 1", tau * gamma_anchor),
            ));
        }
        let v_min = state0.v.min();
        let v_star = if v_min > 0.0 { v_min } else { 0.0 };
        let gamma_v_star = m.gamma(v_star)?;
        let c = tau.max(1.0) * (2.0 * anchor * gamma_v_star + anchor * gamma_anchor);
        let mut k = c;
        for (&v0, &w0) in state0.v.values().iter().zip(state0.w.values()) {
            k = k.max(v0 - w0 - tau * m.big_gamma(v0)?);
        }
        Ok(Self {
            w0: state0.w.values().to_vec(),
            v_star,
            gamma_v_star,
            anchor,
            gamma_anchor,
            tau,
            k: k + 1e-12,
        })
    }

    /// `(min(w0 e^{gamma(v*) t} - w), min((w + K)/(1 - tau gamma(a)) - v))`.
    pub fn margins(&self, state: &SimState) -> (f64, f64) {
        comparison_check(self, state)
    }
}

pub fn comparison_check(setup: &ComparisonSetup, state: &SimState) -> (f64, f64) {
    let growth = (setup.gamma_v_star * state.t).exp();
    let w = state.w.values();
    let w_margin = setup
        .w0
        .iter()
        .zip(w)
        .fold(f64::INFINITY, |m, (w0, w)| m.min(w0 * growth - w));
    let denom = 1.0 - setup.tau * setup.gamma_anchor;
    let v_margin = w
        .iter()
        .zip(state.v.values())
        .fold(f64::INFINITY, |m, (w, v)| m.min((w + setup.k) / denom - v));
    (w_margin, v_margin)
}

/// Assembles the record for `state`. `prev` is the preceding state and the
/// step size, needed for the time-difference quantities.
pub fn build_record(
    state: &SimState,
    prev: Option<(&SimState, f64)>,
    m: &Motility,
    comparison: Option<&ComparisonSetup>,
) -> Result<DiagnosticsRecord> {
    let (dissipation_d, key_identity_residual) = match prev {
        Some((p, dt)) => {
            let d = match dissipation(state, p.v.values(), dt, m) {
                Ok(d) => Some(d),
                Err(Error::Unsupported(_)) => None,
                Err(e) => return Err(e),
            };
            (d, Some(key_identity_residual(state, p.w.values(), dt, m)?))
        }
        None => (None, None),
    };
    let margins = comparison.map(|c| comparison_check(c, state));
    Ok(DiagnosticsRecord {
        step: state.step_index,
        t: state.t,
        mass: state.mass(),
        lyapunov_f: lyapunov(state),
        dissipation_d,
        u_max: state.u.max(),
        v_max: state.v.max(),
        w_max: state.w.max(),
        u_min: state.u.min(),
        v_min: state.v.min(),
        key_identity_residual,
        w_bound_margin: margins.map(|m| m.0),
        v_bound_margin: margins.map(|m| m.1),
        k_used: comparison.map(|c| c.k),
        abort: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundedness {
    Bounded,
    Growing,
    Inconclusive,
}

impl std::fmt::Display for Boundedness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundedness::Bounded => "bounded",
            Boundedness::Growing => "growing",
            Boundedness::Inconclusive => "inconclusive",
        })
    }
}

/// Least-squares slope of `y` against `x`.
fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Classifies a run as bounded, growing or inconclusive from its `u_max` history.
///
/// A run that tripped the blow-up ceiling is growing. Otherwise the last
/// third of the time window decides: bounded when `u_max` varies by at most
/// 5% there with a non-positive trend in `log t`, growing when `u_max` rose
/// at least tenfold overall and the trend is positive.
pub fn classify_boundedness(records: &[DiagnosticsRecord], t_end: f64) -> Result<Boundedness> {
    if records.iter().any(|r| r.abort.as_deref().is_some_and(|a| a.starts_with("ceiling"))) {
        return Ok(Boundedness::Growing);
    }
    if records.len() < MIN_RECORDS {
        return Err(Error::InsufficientData(format!(
            "{} records, need at least {MIN_RECORDS}",
            records.len()
        )));
    }
    let (first, last) = (&records[0], &records[records.len() - 1]);
    if last.t - first.t < 0.8 * t_end {
        return Err(Error::InsufficientData(format!(
            "records span {} of t_end = {t_end}",
            last.t - first.t
        )));
    }
    let cut = last.t - (last.t - first.t) / 3.0;
    let tail: Vec<&DiagnosticsRecord> = records.iter().filter(|r| r.t >= cut && r.t > 0.0).collect();
    if tail.len() < 2 {
        return Err(Error::InsufficientData("fewer than two records in the last third".into()));
    }
    let xs: Vec<f64> = tail.iter().map(|r| r.t.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.u_max.ln()).collect();
    let slope = ls_slope(&xs, &ys);
    let hi = tail.iter().map(|r| r.u_max).fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().map(|r| r.u_max).fold(f64::INFINITY, f64::min);
    let variation = (hi - lo) / hi;
    let gain = last.u_max / first.u_max;
    if variation <= 0.05 && slope <= SLOPE_EPS {
        Ok(Boundedness::Bounded)
    } else if gain >= 10.0 && slope > SLOPE_EPS {
        Ok(Boundedness::Growing)
    } else {
        Ok(Boundedness::Inconclusive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DomainSpec, Field, Grid};

    fn state(u: f64, v: f64, tau: f64) -> SimState {
        let g = Grid::build(DomainSpec::interval(1.0, 16)).unwrap();
        SimState::new(Field::constant(g.clone(), u), Field::constant(g, v), tau).unwrap()
    }

    #[test]
    fn lyapunov_of_constants() {
        assert!((lyapunov(&state(1.0, 1.0, 1.0)) + 0.5).abs() < 1e-14);
        assert!(lyapunov(&state(1.0, 0.0, 1.0)).abs() < 1e-14);
        let g = Grid::build(DomainSpec::interval(1.0, 16)).unwrap();
        let s = SimState::new(Field::zeros(g.clone()), Field::zeros(g), 1.0).unwrap();
        assert_eq!(lyapunov(&s), 0.0);
    }

    #[test]
    fn dissipation_constants() {
        let s = state(2.0, 1.0, 1.0);
        let m = Motility::exp_decay();
        // equilibrium in the flux term, only v_t remains
        let prev = vec![0.5; 16];
        let d = dissipation(&s, &prev, 0.1, &m).unwrap();
        assert!((d - 25.0).abs() < 1e-12, "{d}");
        let d0 = dissipation(&s, s.v.values(), 0.1, &m).unwrap();
        assert!(d0.abs() < 1e-15);
        assert!(matches!(
            dissipation(&s, &prev, 0.1, &Motility::gaussian()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dissipation_vanishes_on_boltzmann_profile() {
        let g = Grid::build(DomainSpec::interval(1.0, 64)).unwrap();
        let v = Field::from_fn(g.clone(), |x| (3.0 * x[0]).sin());
        let u = v.map(|v| 0.3 * v.exp());
        let s = SimState::new(u, v.clone(), 1.0).unwrap();
        let d = dissipation(&s, v.values(), 0.1, &Motility::exp_decay()).unwrap();
        assert!(d.abs() < 1e-20, "{d}");
    }

    #[test]
    fn log_mean_is_continuous() {
        assert!((log_mean(2.0, 2.0) - 2.0).abs() < 1e-15);
        assert!((log_mean(2.0, 2.0 + 1e-9) - 2.0).abs() < 1e-8);
        assert!((log_mean(1.0, std::f64::consts::E) - (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn key_identity_constant_equilibrium() {
        let s = state(1.5, 1.5, 1.0);
        let r = key_identity_residual(&s, s.w.values(), 0.01, &Motility::exp_decay()).unwrap();
        assert!(r < 1e-13);
    }

    #[test]
    fn margins_tight_at_start() {
        let g = Grid::build(DomainSpec::interval(1.0, 32)).unwrap();
        let u = Field::from_fn(g.clone(), |x| 1.0 + (3.0 * x[0]).cos());
        let v = Field::from_fn(g, |x| 0.5 + x[0]);
        let s = SimState::new(u, v, 1.0).unwrap();
        let m = Motility::exp_decay().with_anchor(0.7).unwrap();
        let setup = ComparisonSetup::new(&s, &m).unwrap();
        let (wm, vm) = comparison_check(&setup, &s);
        assert_eq!(wm, 0.0);
        assert!(vm >= 0.0);
        assert_eq!(setup.v_star, 0.5 + 1.0 / 64.0);
        // K dominates both constraints it is built from
        let c = 2.0 * 0.7 * (-setup.v_star).exp() + 0.7 * (-0.7f64).exp();
        assert!(setup.k >= c);
    }

    #[test]
    fn comparison_needs_small_tau_gamma() {
        let s = state(1.0, 1.0, 2.0);
        let m = Motility::exp_decay().with_anchor(0.0).unwrap();
        assert!(ComparisonSetup::new(&s, &m).is_err());
        assert!(matches!(ComparisonSetup::new(&s, &Motility::exp_decay()), Err(Error::NoAnchor)));
    }

    fn rec(t: f64, u_max: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            step: 0,
            t,
            mass: 1.0,
            lyapunov_f: 0.0,
            dissipation_d: None,
            u_max,
            v_max: 0.0,
            w_max: 0.0,
            u_min: 0.0,
            v_min: 0.0,
            key_identity_residual: None,
            w_bound_margin: None,
            v_bound_margin: None,
            k_used: None,
            abort: None,
        }
    }

    #[test]
    fn classify_cases() {
        let flat: Vec<_> = (0..100).map(|i| rec(i as f64, 2.0)).collect();
        assert_eq!(classify_boundedness(&flat, 99.0).unwrap(), Boundedness::Bounded);
        let grow: Vec<_> = (0..100).map(|i| rec(i as f64, 1.0 + (i * i) as f64)).collect();
        assert_eq!(classify_boundedness(&grow, 99.0).unwrap(), Boundedness::Growing);
        let wobble: Vec<_> = (0..100).map(|i| rec(i as f64, 2.0 + (i as f64).sin())).collect();
        assert_eq!(classify_boundedness(&wobble, 99.0).unwrap(), Boundedness::Inconclusive);
        assert!(classify_boundedness(&flat[..10], 99.0).is_err());
        assert!(classify_boundedness(&flat, 1000.0).is_err());
        let mut aborted = flat[..3].to_vec();
        aborted[2].abort = Some("ceiling: u_max=2e8 at step 3".into());
        assert_eq!(classify_boundedness(&aborted, 99.0).unwrap(), Boundedness::Growing);
    }

    #[test]
    fn csv_round_trip() {
        let mut r = rec(0.5, 3.0);
        r.dissipation_d = Some(1.25);
        r.w_bound_margin = Some(f64::INFINITY);
        r.abort = Some("ceiling, now".into());
        let text = write_csv(&[rec(0.0, 1.0), r.clone()], "abc");
        let (hash, back) = parse_csv(&text).unwrap();
        assert_eq!(hash.as_deref(), Some("abc"));
        assert_eq!(back[0], rec(0.0, 1.0));
        assert_eq!(back[1].dissipation_d, Some(1.25));
        assert_eq!(back[1].w_bound_margin, None);
        assert_eq!(back[1].abort.as_deref(), Some("ceiling; now"));
        let json = r.to_json_line("abc").unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["run_hash"], "abc");
        assert!(v["w_bound_margin"].is_null());
        assert_eq!(v["lyapunov_F"], 0.0);
    }
}
