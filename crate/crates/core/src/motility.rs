//! Signal-dependent motility functions `gamma(s)` and their assumption ladder.
//!
//! Built-in families are evaluated in closed form from the scaled argument
//! `x = s / scale`:
//!
//! | family       | gamma(s)        |
//! |--------------|-----------------|
//! | `exp-decay`  | `exp(-x)`       |
//! | `power`      | `x^(-k)`, k > 0 |
//! | `gaussian`   | `exp(-x^2)`     |
//! | `double-exp` | `exp(-exp(x))`  |
//! | `tabulated`  | piecewise linear through `(s_i, gamma_i)` |
//!
//! Assumption checks work on `ln gamma` and its derivatives so that families
//! which underflow in `f64` (e.g. `exp(-exp(x))` beyond `x ~ 6.6`) are still
//! judged correctly on wide lattices.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Lower evaluation cutoff enforced for singular (power) families.
pub const SINGULAR_FLOOR: f64 = 1e-8;
/// Absolute tolerance of the adaptive quadrature behind `big_gamma`.
pub const QUADRATURE_TOL: f64 = 1e-10;
/// Largest exponent tried when searching the least `k` of (A2).
pub const A2_MAX_K: u32 = 64;
/// Default lattice size for the assumption checks.
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    s: Vec<f64>,
    gamma: Vec<f64>,
}

impl Table {
    pub fn new(s: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if s.len() != gamma.len() || s.len() < 2 {
            return Err(Error::param("table", "need at least two (s, gamma) rows of equal length"));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("table", "s must be strictly increasing"));
        }
        if s[0] < 0.0 || s.iter().chain(&gamma).any(|v| !v.is_finite()) {
            return Err(Error::param("table", "values must be finite with s >= 0"));
        }
        if gamma.iter().any(|g| *g <= 0.0) {
            return Err(Error::param("table", "gamma must be positive"));
        }
        Ok(Self { s, gamma })
    }

    /// Two-column CSV `s,gamma`; a non-numeric first line is taken as header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut s = Vec::new();
        let mut g = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (cols.len() == 2)
                .then(|| Some((cols[0].parse::<f64>().ok()?, cols[1].parse::<f64>().ok()?)))
                .flatten();
            match parsed {
                Some((a, b)) => {
                    s.push(a);
                    g.push(b);
                }
                None if i == 0 => continue,
                None => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        message: format!("line {}: expected two numeric columns", i + 1),
                    })
                }
            }
        }
        Table::new(s, g).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })
    }

    fn segment(&self, s: f64) -> usize {
        match self.s.partition_point(|x| *x <= s) {
            0 => 0,
            p => (p - 1).min(self.s.len() - 2),
        }
    }

    fn eval(&self, s: f64) -> f64 {
        let last = self.s.len() - 1;
        if s >= self.s[last] {
            return self.gamma[last];
        }
        let i = self.segment(s);
        let t = (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
        self.gamma[i] + t * (self.gamma[i + 1] - self.gamma[i])
    }

    fn slope(&self, s: f64) -> f64 {
        if s >= self.s[self.s.len() - 1] {
            return 0.0;
        }
        let i = self.segment(s);
        (self.gamma[i + 1] - self.gamma[i]) / (self.s[i + 1] - self.s[i])
    }

    /// Exact integral of the interpolant over `[lo, hi]`, `lo <= hi`.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut knots = vec![lo];
        knots.extend(self.s.iter().copied().filter(|x| *x > lo && *x < hi));
        knots.push(hi);
        knots
            .windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.eval(w[0]) + self.eval(w[1])))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    ExpDecay,
    Power { k: f64 },
    Gaussian,
    DoubleExp,
    Tabulated(Arc<Table>),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::ExpDecay => "exp-decay",
            Family::Power { .. } => "power",
            Family::Gaussian => "gaussian",
            Family::DoubleExp => "double-exp",
            Family::Tabulated(_) => "tabulated",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Motility {
    family: Family,
    scale: f64,
    floor: f64,
    anchor: Option<f64>,
}

impl Motility {
    pub fn exp_decay() -> Self {
        Self { family: Family::ExpDecay, scale: 1.0, floor: 0.0, anchor: None }
    }

    pub fn power(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::param("k", format!("power family needs k > 0, got {k}")));
        }
        Ok(Self { family: Family::Power { k }, scale: 1.0, floor: SINGULAR_FLOOR, anchor: None })
    }

    pub fn gaussian() -> Self {
        Self { family: Family::Gaussian, scale: 1.0, floor: 0.0, anchor: None }
    }

    pub fn double_exp() -> Self {
        Self { family: Family::DoubleExp, scale: 1.0, floor: 0.0, anchor: None }
    }

    pub fn tabulated(table: Table) -> Self {
        let floor = table.s[0];
        Self { family: Family::Tabulated(Arc::new(table)), scale: 1.0, floor, anchor: None }
    }

    /// Stretches the argument: `gamma(s) = base(s / scale)`. Ignored by
    /// tabulated motilities, whose table is already in signal units.
    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::param("scale", format!("must be positive, got {scale}")));
        }
        if !matches!(self.family, Family::Tabulated(_)) {
            self.scale = scale;
        }
        Ok(self)
    }

    /// Raises the evaluation floor. Power families never go below
    /// [`SINGULAR_FLOOR`].
    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor.is_finite() && floor >= 0.0) {
            return Err(Error::param("floor", format!("must be >= 0, got {floor}")));
        }
        self.floor = self.floor.max(floor);
        Ok(self)
    }

    pub fn with_anchor(mut self, anchor: f64) -> Result<Self> {
        if !(anchor.is_finite() && anchor >= self.floor) {
            return Err(Error::param("anchor", format!("must be finite and >= floor {}, got {anchor}", self.floor)));
        }
        self.anchor = Some(anchor);
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn anchor(&self) -> Option<f64> {
        self.anchor
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.family, Family::Power { .. })
    }

    fn check_domain(&self, s: f64) -> Result<f64> {
        if s.is_nan() || s < self.floor {
            return Err(Error::BelowFloor { s, floor: self.floor });
        }
        Ok(s / self.scale)
    }

    pub fn gamma(&self, s: f64) -> Result<f64> {
        let x = self.check_domain(s)?;
        Ok(match &self.family {
            Family::ExpDecay => (-x).exp(),
            Family::Power { k } => x.powf(-k),
            Family::Gaussian => (-x * x).exp(),
            Family::DoubleExp => (-x.exp()).exp(),
            Family::Tabulated(t) => t.eval(s),
        })
    }

    pub fn gamma_d1(&self, s: f64) -> Result<f64> {
        let x = self.check_domain(s)?;
        let sc = self.scale;
        Ok(match &self.family {
            Family::ExpDecay => -(-x).exp() / sc,
            Family::Power { k } => -k * x.powf(-k - 1.0) / sc,
            Family::Gaussian => -2.0 * x * (-x * x).exp() / sc,
            Family::DoubleExp => -(x - x.exp()).exp() / sc,
            Family::Tabulated(t) => t.slope(s),
        })
    }

    pub fn gamma_d2(&self, s: f64) -> Result<f64> {
        let x = self.check_domain(s)?;
        let sc2 = self.scale * self.scale;
        Ok(match &self.family {
            Family::ExpDecay => (-x).exp() / sc2,
            Family::Power { k } => k * (k + 1.0) * x.powf(-k - 2.0) / sc2,
            Family::Gaussian => (4.0 * x * x - 2.0) * (-x * x).exp() / sc2,
            Family::DoubleExp => ((2.0 * x - x.exp()).exp() - (x - x.exp()).exp()) / sc2,
            Family::Tabulated(_) => return Err(Error::Unsupported("second derivative")),
        })
    }

    /// `ln gamma(s)`, finite wherever `gamma` is positive even if it underflows.
    pub fn ln_gamma(&self, s: f64) -> Result<f64> {
        let x = self.check_domain(s)?;
        Ok(match &self.family {
            Family::ExpDecay => -x,
            Family::Power { k } => -k * x.ln(),
            Family::Gaussian => -x * x,
            Family::DoubleExp => -x.exp(),
            Family::Tabulated(t) => t.eval(s).ln(),
        })
    }

    /// First and (when available) second derivative of `ln gamma`.
    fn ln_gamma_derivs(&self, s: f64) -> Result<(f64, Option<f64>)> {
        let x = self.check_domain(s)?;
        let sc = self.scale;
        Ok(match &self.family {
            Family::ExpDecay => (-1.0 / sc, Some(0.0)),
            Family::Power { k } => (-k / (x * sc), Some(k / (x * x * sc * sc))),
            Family::Gaussian => (-2.0 * x / sc, Some(-2.0 / (sc * sc))),
            Family::DoubleExp => (-x.exp() / sc, Some(-x.exp() / (sc * sc))),
            Family::Tabulated(t) => (t.slope(s) / t.eval(s), None),
        })
    }

    /// Log-spaced sample lattice on `[lower, s_max]`, with `s = 0` prepended
    /// for families that are regular at the origin.
    pub fn lattice(&self, s_max: f64, samples: usize) -> Vec<f64> {
        let lower = match &self.family {
            Family::Tabulated(t) => t.s[0].max(self.floor),
            _ => self.floor.max(s_max * 1e-8),
        };
        let regular_origin = self.floor == 0.0;
        let count = if regular_origin { samples - 1 } else { samples };
        let (l0, l1) = (lower.max(f64::MIN_POSITIVE).ln(), s_max.ln());
        let mut out = Vec::with_capacity(samples);
        if regular_origin {
            out.push(0.0);
        }
        for i in 0..count {
            let t = i as f64 / (count - 1) as f64;
            out.push((l0 + t * (l1 - l0)).exp());
        }
        if let Some(last) = out.last_mut() {
            *last = s_max;
        }
        out
    }

    pub fn check_assumptions(&self, s_max: f64, samples: usize) -> Result<AssumptionReport> {
        if samples < 100 {
            return Err(Error::param("samples", format!("at least 100 required, got {samples}")));
        }
        if let Some(a) = self.anchor {
            if s_max <= a {
                return Err(Error::param("s_max", format!("must exceed the anchor {a}")));
            }
        }
        if !(s_max.is_finite() && s_max > self.floor) {
            return Err(Error::param("s_max", format!("must exceed the floor {}", self.floor)));
        }
        let lattice = self.lattice(s_max, samples);
        let mut ln_g = Vec::with_capacity(lattice.len());
        let mut d1 = Vec::with_capacity(lattice.len());
        let mut d2 = Vec::with_capacity(lattice.len());
        for &s in &lattice {
            ln_g.push(self.ln_gamma(s)?);
            let (a, b) = self.ln_gamma_derivs(s)?;
            d1.push(a);
            d2.push(b);
        }

        // ln gamma = -inf is underflow of a positive value, not a zero
        let positive = ln_g.iter().all(|l| !l.is_nan() && *l < f64::INFINITY);
        let non_increasing = d1.iter().all(|d| *d <= 0.0) && ln_g.windows(2).all(|w| w[1] <= w[0]);
        let a0 = positive && non_increasing;

        let ln_tail = *ln_g.last().unwrap_or(&0.0);
        let half = self.ln_gamma(0.5 * s_max).unwrap_or(ln_tail);
        let tail_slope = (ln_tail - half) / std::f64::consts::LN_2;
        let a1 = a0 && (ln_tail < (1e-6f64).ln() || tail_slope <= -0.05);
        let gamma_inf_upper = ln_tail.exp();
        let a1_prime = a0 && gamma_inf_upper < 1.0;

        let window: Vec<usize> = (0..lattice.len()).filter(|&i| lattice[i] >= 0.5 * s_max).collect();
        let a2_min_k = (1..=A2_MAX_K).find(|&k| {
            window.iter().all(|&i| {
                let kk = k as f64 / lattice[i];
                kk + d1[i] > 1e-12 * kk
            })
        });

        let a3 = if d2.iter().any(Option::is_none) {
            Ternary::Unknown
        } else if d1
            .iter()
            .zip(&d2)
            .all(|(l1, l2)| l1 * l1 <= l2.unwrap() + 1e-12 * l1 * l1)
        {
            Ternary::Holds
        } else {
            Ternary::Fails
        };

        Ok(AssumptionReport {
            a0,
            a1,
            a1_prime,
            gamma_inf_upper,
            a2_min_k,
            a3,
        })
    }

    /// Anchor `a` with `gamma(a) = 1 / (2 tau)`, or the floor when `gamma`
    /// already sits below that level there.
    pub fn choose_anchor(&self, tau: f64) -> Result<f64> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::param("tau", format!("must be positive, got {tau}")));
        }
        let target = 1.0 / (2.0 * tau);
        let ln_target = target.ln();
        let start = self.floor;
        if self.ln_gamma(start)? <= ln_target {
            return Ok(start);
        }
        let ceiling = 1e12 * self.scale.max(1.0);
        let mut lo = start;
        let mut hi = start.max(self.scale);
        while self.ln_gamma(hi)? > ln_target {
            lo = hi;
            hi *= 2.0;
            if hi > ceiling {
                return Err(Error::AnchorNotFound { target, ceiling });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.ln_gamma(mid)? > ln_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// `Gamma(s) = int_a^s gamma`, using the stored anchor.
    pub fn big_gamma(&self, s: f64) -> Result<f64> {
        let a = self.anchor.ok_or(Error::NoAnchor)?;
        let x = self.check_domain(s)?;
        let xa = a / self.scale;
        let sc = self.scale;
        Ok(match &self.family {
            Family::ExpDecay => sc * ((-xa).exp() - (-x).exp()),
            Family::Power { k } if (*k - 1.0).abs() < 1e-14 => sc * (x / xa).ln(),
            Family::Power { k } => sc * (xa.powf(1.0 - k) - x.powf(1.0 - k)) / (k - 1.0),
            Family::Tabulated(t) => {
                if s >= a {
                    t.integral(a, s)
                } else {
                    -t.integral(s, a)
                }
            }
            Family::Gaussian | Family::DoubleExp => {
                let f = |y: f64| self.gamma(y).unwrap_or(0.0);
                if s >= a {
                    adaptive_simpson(&f, a, s, QUADRATURE_TOL)
                } else {
                    -adaptive_simpson(&f, s, a, QUADRATURE_TOL)
                }
            }
        })
    }

    /// Constant `C_a(s0)` with `s gamma(s) - C_a(s0) <= Gamma(s)` for `s >= s0`.
    pub fn sandwich_constant(&self, s0: f64) -> Result<f64> {
        let a = self.anchor.ok_or(Error::NoAnchor)?;
        Ok((2.0 * a * self.gamma(s0)?).max(a * self.gamma(a)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ternary {
    Holds,
    Fails,
    Unknown,
}

impl Ternary {
    fn mark(self) -> &'static str {
        match self {
            Ternary::Holds => "✓",
            Ternary::Fails => "✗",
            Ternary::Unknown => "?",
        }
    }
}

/// Lattice verdicts for (A0), (A1), (A1'), (A2) and (A3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssumptionReport {
    pub a0: bool,
    pub a1: bool,
    pub a1_prime: bool,
    /// `gamma(s_max)`, an upper bound for the limit at infinity.
    pub gamma_inf_upper: f64,
    /// Least integer `k` with `s^k gamma(s)` increasing on `[s_max/2, s_max]`.
    pub a2_min_k: Option<u32>,
    pub a3: Ternary,
}

impl AssumptionReport {
    pub fn a2(&self) -> bool {
        self.a2_min_k.is_some()
    }

    pub fn a2_with(&self, k: u32) -> bool {
        self.a2_min_k.is_some_and(|m| m <= k)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tick = |b: bool| if b { "✓" } else { "✗" };
        write!(f, "A0 {} A1 {} A1' {} ", tick(self.a0), tick(self.a1), tick(self.a1_prime))?;
        match self.a2_min_k {
            Some(k) => write!(f, "A2(k={k}) ✓ ")?,
            None => write!(f, "A2 ✗ ")?,
        }
        write!(f, "A3 {}", self.a3.mark())
    }
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    // split first so narrow features are not missed by the initial estimate
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            recurse(f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), tol / pieces as f64, 40)
        })
        .sum()
}
