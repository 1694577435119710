//! Initial data and the experiments built on the solver: the concentrated
//! super-critical datum, Gaussian bumps, the stationary problem and the
//! critical-mass sweep.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{self, classify_boundedness, Boundedness};
use crate::error::{Error, Result};
use crate::grid::{DomainKind, DomainSpec, Field, Grid};
use crate::motility::Motility;
use crate::solver::{self, helmholtz_solve, RunObserver, RunSettings, SimState};

/// Distance from a quantised mass below which data are rejected.
pub const QUANTIZATION_GUARD: f64 = 1e-3;
/// Cells required inside the concentration radius `1/lambda`.
pub const CELLS_PER_CORE: usize = 8;
pub const DEFAULT_DAMPING: f64 = 0.5;
pub const STATIONARY_TOLERANCE: f64 = 1e-8;
pub const STATIONARY_MAX_ITER: usize = 10_000;

fn bump_step(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Radial cut-off equal to 1 on `|x| <= r1`, 0 on `|x| >= r`, smooth and
/// non-increasing in between. `x` is a position relative to the centre.
pub fn bump_function(r: f64, r1: f64, x: &[f64]) -> Result<f64> {
    if !(r1 > 0.0 && r1 < r) {
        return Err(Error::param("r1", format!("need 0 < r1 < r, got r1 = {r1}, r = {r}")));
    }
    let rho = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(bump_radial(r, r1, rho))
}

fn bump_radial(r: f64, r1: f64, rho: f64) -> f64 {
    if rho <= r1 {
        return 1.0;
    }
    if rho >= r {
        return 0.0;
    }
    let t = (rho - r1) / (r - r1);
    let (a, b) = (bump_step(1.0 - t), bump_step(t));
    a / (a + b)
}

/// Entire solutions `u = 8 lambda^2 / (1 + lambda^2 rho^2)^2` and
/// `v = 2 log(lambda / (1 + lambda^2 rho^2)) + log 8` as functions of the
/// distance `rho` from the centre.
pub fn unnormalized_profiles(lambda: f64) -> Result<(impl Fn(f64) -> f64, impl Fn(f64) -> f64)> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
    }
    let u = move |rho: f64| {
        let q = 1.0 + lambda * lambda * rho * rho;
        8.0 * lambda * lambda / (q * q)
    };
    let v = move |rho: f64| 2.0 * (lambda / (1.0 + lambda * lambda * rho * rho)).ln() + 8f64.ln();
    Ok((u, v))
}

/// `8 pi (1 - 1/(1 + (lambda l)^2))`, the mass of `u_lambda` in the disk of radius `l`.
pub fn profile_mass_in_disk(lambda: f64, l: f64) -> f64 {
    8.0 * PI * (1.0 - 1.0 / (1.0 + (lambda * l).powi(2)))
}

fn nearest_multiple(x: f64, quantum: f64) -> f64 {
    (x / quantum).round() * quantum
}

/// Rejects masses within [`QUANTIZATION_GUARD`] of a positive multiple of `quantum`.
pub fn quantization_guard(mass: f64, quantum: f64) -> Result<()> {
    let q = nearest_multiple(mass, quantum);
    if q > 0.0 && (mass - q).abs() < QUANTIZATION_GUARD {
        return Err(Error::Quantization { mass, quantum: q });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowupDatumParams {
    pub mass_target: f64,
    pub lambda: f64,
    pub r: f64,
    pub r1: f64,
    /// Centre of the concentration; the domain centre when `None`.
    pub center: Option<Vec<f64>>,
}

impl BlowupDatumParams {
    pub fn new(mass_target: f64, lambda: f64, r: f64, r1: f64) -> Self {
        Self { mass_target, lambda, r, r1, center: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass_target.is_finite() && self.mass_target > 8.0 * PI) {
            return Err(Error::param(
                "mass_target",
                format!("must exceed 8*pi, got {}", self.mass_target),
            ));
        }
        quantization_guard(self.mass_target, 4.0 * PI)?;
        if !(self.lambda.is_finite() && self.lambda >= 1.0) {
            return Err(Error::param("lambda", format!("must be >= 1, got {}", self.lambda)));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::param("r", format!("must lie in (0, 1), got {}", self.r)));
        }
        if !(self.r1 > 0.0 && self.r1 < self.r) {
            return Err(Error::param("r1", format!("must lie in (0, r), got {}", self.r1)));
        }
        Ok(())
    }

    /// `a` must lie in `[mass/8pi, mass/(8pi f(1))]` with `f(l) = 1 - 1/(1 + (l r1)^2)`.
    pub fn bracket(&self) -> (f64, f64) {
        let f1 = 1.0 - 1.0 / (1.0 + self.r1 * self.r1);
        (self.mass_target / (8.0 * PI), self.mass_target / (8.0 * PI * f1))
    }
}

/// Resolves the centre of a concentrated datum and checks that the ball of
/// radius `clearance` around it stays inside the domain.
fn resolve_center(spec: &DomainSpec, center: Option<&[f64]>, clearance: f64) -> Result<Vec<f64>> {
    match spec.kind {
        DomainKind::Interval => Err(Error::param("domain", "concentrated data need a two-dimensional domain")),
        DomainKind::DiskRadial => {
            if center.is_some_and(|c| c.iter().any(|x| *x != 0.0)) {
                return Err(Error::param("center", "the radial disk only admits the origin"));
            }
            if spec.extent[0] <= clearance {
                return Err(Error::param(
                    "r",
                    format!("ball of radius {clearance} does not fit in the disk of radius {}", spec.extent[0]),
                ));
            }
            Ok(vec![0.0])
        }
        DomainKind::Rectangle => {
            let c = match center {
                Some(c) if c.len() == 2 => c.to_vec(),
                Some(_) => return Err(Error::param("center", "needs two coordinates")),
                None => vec![0.5 * spec.extent[0], 0.5 * spec.extent[1]],
            };
            let dist = c
                .iter()
                .zip(&spec.extent)
                .map(|(x, l)| x.min(l - x))
                .fold(f64::INFINITY, f64::min);
            if dist <= clearance {
                return Err(Error::param(
                    "center",
                    format!("distance {dist} to the boundary must exceed {clearance}"),
                ));
            }
            Ok(c)
        }
    }
}

/// Concentrated datum `u0 = a u_bar phi`, `v0 = a v_bar phi` with
/// `a = mass / int(u_bar phi)`.
pub fn blowup_datum(p: &BlowupDatumParams, grid: &Arc<Grid>) -> Result<(Field, Field, f64)> {
    p.validate()?;
    let spec = grid.spec();
    let center = resolve_center(spec, p.center.as_deref(), 2.0 * p.r)?;
    let h = spec.spacing().into_iter().fold(0.0, f64::max);
    let cells = 1.0 / (p.lambda * h);
    if cells < CELLS_PER_CORE as f64 {
        return Err(Error::Resolution { cells, required: CELLS_PER_CORE });
    }
    let (lam, r) = (p.lambda, p.r);
    let mut ubar_phi = Vec::with_capacity(grid.len());
    let mut vbar_phi = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let rho = grid.distance_from(i, &center);
        let phi = bump_radial(r, p.r1, rho);
        let q = 1.0 + lam * lam * rho * rho;
        let ubar = 8.0 * lam * lam / (q * q);
        let vbar = 2.0 * ((1.0 + lam * lam * r * r) / q).ln() + 8f64.ln();
        ubar_phi.push(ubar * phi);
        vbar_phi.push(vbar * phi);
    }
    let integral = grid.integrate(&ubar_phi);
    let a = p.mass_target / integral;
    let (lower, upper) = p.bracket();
    if a < lower * 0.99 || a > upper * 1.01 {
        return Err(Error::Bracket { a, lower, upper });
    }
    let u0 = Field::new(grid.clone(), ubar_phi.iter().map(|x| a * x).collect())?;
    let v0 = Field::new(grid.clone(), vbar_phi.iter().map(|x| a * x).collect())?;
    Ok((u0, v0, a))
}

/// Normalised Gaussian `u0` of standard deviation `width` and total mass
/// `mass`, paired with `v0 = (I - L)^{-1} u0`.
pub fn gaussian_bump(grid: &Arc<Grid>, mass: f64, width: f64, center: Option<&[f64]>) -> Result<(Field, Field)> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::param("mass", format!("must be positive, got {mass}")));
    }
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::param("width", format!("must be positive, got {width}")));
    }
    let spec = grid.spec();
    let c = match spec.kind {
        DomainKind::Interval => vec![center.map_or(0.5 * spec.extent[0], |c| c[0])],
        _ => resolve_center(spec, center, 0.0)?,
    };
    let g: Vec<f64> = (0..grid.len())
        .map(|i| {
            let rho = grid.distance_from(i, &c);
            (-rho * rho / (2.0 * width * width)).exp()
        })
        .collect();
    let total = grid.integrate(&g);
    let u0 = Field::new(grid.clone(), g.iter().map(|x| mass * x / total).collect())?;
    let v0 = helmholtz_solve(&u0)?;
    Ok((u0, v0))
}

#[derive(Clone, Debug)]
pub struct StationarySolution {
    pub v_s: Field,
    pub u_s: Field,
    pub mass: f64,
    pub residual: f64,
    pub lyapunov_f: f64,
    pub iterations: usize,
}

/// `mass e^v / int e^v`, evaluated with the maximum factored out.
fn boltzmann(v: &Field, mass: f64) -> Field {
    let vmax = v.max();
    let e = v.map(|x| (x - vmax).exp());
    let z = e.integrate();
    e.map(|x| mass * x / z)
}

fn stationary_residual(v: &Field, u: &Field) -> f64 {
    v.values()
        .iter()
        .zip(v.laplacian().values())
        .zip(u.values())
        .fold(0.0f64, |m, ((v, lv), u)| m.max((v - lv - u).abs()))
}

/// Damped fixed point `v <- (1 - theta) v + theta (I - L)^{-1}[mass e^v / int e^v]`.
///
/// Masses near the quantised values (multiples of `8 pi` on the radial disk,
/// `4 pi` elsewhere) are rejected.
pub fn stationary_solve(mass: f64, v_init: &Field, damping: f64) -> Result<StationarySolution> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::param("mass", format!("must be positive, got {mass}")));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::param("damping", format!("must lie in (0, 1], got {damping}")));
    }
    let quantum = match v_init.grid().kind() {
        DomainKind::DiskRadial => 8.0 * PI,
        _ => 4.0 * PI,
    };
    quantization_guard(mass, quantum)?;

    let mut v = v_init.clone();
    let mut u = boltzmann(&v, mass);
    let mut residual = stationary_residual(&v, &u);
    let mut iterations = 0;
    while residual > STATIONARY_TOLERANCE && iterations < STATIONARY_MAX_ITER {
        let target = helmholtz_solve(&u)?;
        let next: Vec<f64> = v
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| (1.0 - damping) * a + damping * b)
            .collect();
        if next.iter().any(|x| !x.is_finite()) {
            break;
        }
        v = Field::from_vec_unchecked(v.grid().clone(), next);
        u = boltzmann(&v, mass);
        residual = stationary_residual(&v, &u);
        iterations += 1;
    }
    if !(residual <= STATIONARY_TOLERANCE) {
        return Err(Error::NotConverged { iterations, residual });
    }
    let lyapunov_f = diagnostics::lyapunov(&SimState::new(u.clone(), v.clone(), 1.0)?);
    Ok(StationarySolution { v_s: v, u_s: u, mass, residual, lyapunov_f, iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepDatum {
    GaussianBump { width: f64 },
    Blowup { lambda: f64, r: f64, r1: f64 },
}

impl SweepDatum {
    pub fn build(&self, grid: &Arc<Grid>, mass: f64) -> Result<(Field, Field)> {
        match self {
            SweepDatum::GaussianBump { width } => gaussian_bump(grid, mass, *width, None),
            SweepDatum::Blowup { lambda, r, r1 } => {
                let (u, v, _) = blowup_datum(&BlowupDatumParams::new(mass, *lambda, *r, *r1), grid)?;
                Ok((u, v))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub domain: DomainSpec,
    pub datum: SweepDatum,
    pub settings: RunSettings,
    pub tau: f64,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub mass: f64,
    pub verdict: Option<Boundedness>,
    pub u_max_final: Option<f64>,
    pub f_initial: Option<f64>,
    pub f_final: Option<f64>,
    pub abort_reason: Option<String>,
    pub error: Option<String>,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "mass,verdict,u_max_final,F_initial,F_final,abort_reason,error";

    pub fn to_csv_row(&self) -> String {
        let num = |x: Option<f64>| x.map(|x| format!("{x:.16e}")).unwrap_or_default();
        let text = |s: &Option<String>| s.as_deref().unwrap_or("").replace([',', '\n'], ";");
        format!(
            "{:.16e},{},{},{},{},{},{}",
            self.mass,
            self.verdict.map(|v| v.to_string()).unwrap_or_default(),
            num(self.u_max_final),
            num(self.f_initial),
            num(self.f_final),
            text(&self.abort_reason),
            text(&self.error),
        )
    }
}

/// Factory for the per-row observer; receives the row index and mass.
pub type ObserverFactory<'a> = dyn Fn(usize, f64) -> Result<Box<dyn RunObserver>> + Sync + 'a;

fn sweep_row(cfg: &SweepConfig, grid: &Arc<Grid>, index: usize, mass: f64, factory: &ObserverFactory) -> SweepRow {
    let mut row = SweepRow {
        mass,
        verdict: None,
        u_max_final: None,
        f_initial: None,
        f_final: None,
        abort_reason: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let (u0, v0) = cfg.datum.build(grid, mass)?;
        let state = SimState::new(u0, v0, cfg.tau)?;
        let mut observer = factory(index, mass)?;
        let out = solver::run(state, &Motility::exp_decay(), &cfg.settings, observer.as_mut())?;
        observer.on_complete(&out)?;
        row.f_initial = out.records.first().map(|r| r.lyapunov_f);
        row.f_final = out.records.last().map(|r| r.lyapunov_f);
        row.u_max_final = Some(out.final_state.u.max());
        row.abort_reason = out.abort.as_ref().map(ToString::to_string);
        row.verdict = Some(classify_boundedness(&out.records, cfg.settings.t_end)?);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// One exponential-motility run per mass. Rows fail independently and come
/// back in input order.
pub fn critical_mass_sweep(masses: &[f64], cfg: &SweepConfig, factory: &ObserverFactory) -> Result<Vec<SweepRow>> {
    if masses.is_empty() {
        return Ok(Vec::new());
    }
    cfg.settings.validate()?;
    let grid = Grid::build(cfg.domain.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    Ok(pool.install(|| {
        masses
            .par_iter()
            .enumerate()
            .map(|(i, &m)| sweep_row(cfg, &grid, i, m, factory))
            .collect()
    }))
}

/// No bounded verdict at a mass above some growing verdict.
pub fn sweep_is_monotone(rows: &[SweepRow]) -> bool {
    let lowest_growing = rows
        .iter()
        .filter(|r| r.verdict == Some(Boundedness::Growing))
        .map(|r| r.mass)
        .fold(f64::INFINITY, f64::min);
    rows.iter()
        .filter(|r| r.verdict == Some(Boundedness::Bounded))
        .all(|r| r.mass <= lowest_growing)
}
