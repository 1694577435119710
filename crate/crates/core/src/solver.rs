//! Helmholtz inversion and the mass-conservative time stepper.
//!
//! One step from `(u^n, v^n)`:
//!
//! 1. `(I - dt L diag(gamma(v^n))) u^{n+1} = u^n`, solved through
//!    `z = gamma u^{n+1}` so the system is a symmetric M-matrix;
//! 2. `(tau/dt) (v^{n+1} - v^n) = L v^{n+1} - v^{n+1} + u^{n+1}`;
//! 3. `w^{n+1} = (I - L)^{-1} u^{n+1}`.
//!
//! Both solves are unconditionally stable and keep `u, v >= 0`. Since
//! `sum_i w_i (L f)_i = 0` for any `f`, the mass of `u` is preserved to
//! round-off.

use crate::diagnostics::{self, ComparisonSetup, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::linalg::solve_mmatrix;
use crate::motility::Motility;

/// Default blow-up guard on `||u||_inf`.
pub const DEFAULT_CEILING: f64 = 1e8;
/// Values below this (negative) threshold abort a run.
pub const POSITIVITY_TOLERANCE: f64 = 1e-10;
/// `ln gamma` is clamped here inside the stepper; below it the cell is frozen
/// for any practical `dt` and `1/gamma` would overflow.
const LN_GAMMA_FLOOR: f64 = -700.0;

#[derive(Clone, Debug)]
pub struct SimState {
    pub u: Field,
    pub v: Field,
    pub w: Field,
    pub t: f64,
    pub tau: f64,
    pub step_index: usize,
}

impl SimState {
    pub fn new(u: Field, v: Field, tau: f64) -> Result<Self> {
        if !std::sync::Arc::ptr_eq(u.grid(), v.grid()) {
            return Err(Error::param("v", "u and v must live on the same grid"));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::param("tau", format!("must be positive, got {tau}")));
        }
        for (name, f) in [("u", &u), ("v", &v)] {
            if f.values().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("initial data"));
            }
            if f.min() < 0.0 {
                return Err(Error::param(name, format!("must be non-negative, min = {}", f.min())));
            }
        }
        let w = helmholtz_solve(&u)?;
        Ok(Self { u, v, w, t: 0.0, tau, step_index: 0 })
    }

    pub fn mass(&self) -> f64 {
        self.u.integrate()
    }
}

/// `w = (I - L)^{-1} f` with homogeneous Neumann conditions.
pub fn helmholtz_solve(f: &Field) -> Result<Field> {
    let grid = f.grid();
    let w = grid.weights();
    let rhs: Vec<f64> = f.values().iter().zip(w).map(|(f, w)| f * w).collect();
    let x = solve_mmatrix(grid, w, 1.0, &rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("helmholtz solve"));
    }
    Ok(Field::from_vec_unchecked(grid.clone(), x))
}

/// Advances `state` by one step of size `dt`.
pub fn step(state: &SimState, motility: &Motility, dt: f64) -> Result<SimState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let grid = state.u.grid();
    let weights = grid.weights();
    let n = grid.len();

    let mut inv_gamma = Vec::with_capacity(n);
    for &v in state.v.values() {
        let lg = motility.ln_gamma(v)?.max(LN_GAMMA_FLOOR);
        inv_gamma.push((-lg).exp());
    }

    let excess: Vec<f64> = weights.iter().zip(&inv_gamma).map(|(w, ig)| w * ig).collect();
    let rhs: Vec<f64> = weights.iter().zip(state.u.values()).map(|(w, u)| w * u).collect();
    let z = solve_mmatrix(grid, &excess, dt, &rhs)?;
    let u_new: Vec<f64> = z.iter().zip(&inv_gamma).map(|(z, ig)| z * ig).collect();
    check_field(&u_new, "u", state.step_index + 1)?;

    let relax = state.tau / dt;
    let excess_v: Vec<f64> = weights.iter().map(|w| (relax + 1.0) * w).collect();
    let rhs_v: Vec<f64> = weights
        .iter()
        .zip(state.v.values())
        .zip(&u_new)
        .map(|((w, v), u)| w * (relax * v + u))
        .collect();
    let v_new = solve_mmatrix(grid, &excess_v, 1.0, &rhs_v)?;
    check_field(&v_new, "v", state.step_index + 1)?;

    let u = Field::from_vec_unchecked(grid.clone(), u_new);
    let w = helmholtz_solve(&u)?;
    Ok(SimState {
        u,
        v: Field::from_vec_unchecked(grid.clone(), v_new),
        w,
        t: state.t + dt,
        tau: state.tau,
        step_index: state.step_index + 1,
    })
}

fn check_field(values: &[f64], field: &'static str, step: usize) -> Result<()> {
    let mut min = f64::INFINITY;
    for v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(field));
        }
        min = min.min(*v);
    }
    if min < -POSITIVITY_TOLERANCE {
        return Err(Error::Positivity { field, step, min });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Diagnostics every `cadence` steps (plus the initial and final state).
    pub cadence: usize,
    pub ceiling: f64,
    /// Snapshot every `n` steps; initial and final states are always offered.
    pub snapshot_every: Option<usize>,
}

impl RunSettings {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self { dt, t_end, cadence: 10, ceiling: DEFAULT_CEILING, snapshot_every: None }
    }

    pub fn with_cadence(mut self, cadence: usize) -> Self {
        self.cadence = cadence;
        self
    }

    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::param("t_end", format!("must be >= 0, got {}", self.t_end)));
        }
        if self.cadence == 0 {
            return Err(Error::param("cadence", "must be at least 1"));
        }
        if !(self.ceiling > 0.0) {
            return Err(Error::param("ceiling", "must be positive"));
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        if self.t_end <= 0.0 {
            0
        } else {
            (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AbortReason {
    Ceiling { u_max: f64, step: usize },
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::Ceiling { u_max, step } => write!(f, "ceiling: u_max={u_max:e} at step {step}"),
        }
    }
}

/// Receives diagnostics and snapshots as a run progresses.
pub trait RunObserver {
    fn on_record(&mut self, _record: &DiagnosticsRecord) -> Result<()> {
        Ok(())
    }

    fn on_snapshot(&mut self, _state: &SimState) -> Result<()> {
        Ok(())
    }

    /// Called by drivers once the run has finished.
    fn on_complete(&mut self, _outcome: &RunOutcome) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: SimState,
    pub abort: Option<AbortReason>,
    pub steps: usize,
    pub comparison: Option<ComparisonSetup>,
    pub motility: Motility,
}

/// Integrates to `settings.t_end` or until the blow-up guard trips.
///
/// The motility's anchor is chosen from `tau` if it has none; if no anchor
/// exists the comparison margins are left empty.
pub fn run(
    state0: SimState,
    motility: &Motility,
    settings: &RunSettings,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    settings.validate()?;
    let motility = match motility.anchor() {
        Some(_) => motility.clone(),
        None => match motility.choose_anchor(state0.tau) {
            Ok(a) => motility.clone().with_anchor(a)?,
            Err(Error::AnchorNotFound { .. }) => motility.clone(),
            Err(e) => return Err(e),
        },
    };
    let comparison = match motility.anchor() {
        Some(_) => Some(ComparisonSetup::new(&state0, &motility)?),
        None => None,
    };

    let t0 = state0.t;
    let n_steps = settings.step_count();
    let mut records = Vec::new();
    let first = diagnostics::build_record(&state0, None, &motility, comparison.as_ref())?;
    observer.on_record(&first)?;
    observer.on_snapshot(&state0)?;
    records.push(first);

    let mut state = state0;
    let mut abort = None;
    for k in 1..=n_steps {
        let mut next = step(&state, &motility, settings.dt)?;
        next.t = t0 + k as f64 * settings.dt;
        let u_max = next.u.max();
        if u_max > settings.ceiling {
            abort = Some(AbortReason::Ceiling { u_max, step: k });
        }
        if k % settings.cadence == 0 || k == n_steps || abort.is_some() {
            let mut rec = diagnostics::build_record(
                &next,
                Some((&state, settings.dt)),
                &motility,
                comparison.as_ref(),
            )?;
            rec.abort = abort.as_ref().map(ToString::to_string);
            observer.on_record(&rec)?;
            records.push(rec);
        }
        let snap_due = settings.snapshot_every.is_some_and(|s| s > 0 && k % s == 0);
        state = next;
        if abort.is_some() || k == n_steps {
            break;
        }
        if snap_due {
            observer.on_snapshot(&state)?;
        }
    }
    if n_steps > 0 {
        observer.on_snapshot(&state)?;
    }
    Ok(RunOutcome {
        records,
        steps: state.step_index,
        final_state: state,
        abort,
        comparison,
        motility,
    })
}
