//! Run configuration: sectioned `key = value` files.
//!
//! ```text
//! [domain]
//! kind = "disk-radial"
//! extent = [1.0]
//! resolution = [128]
//!
//! [motility]
//! family = "exp-decay"
//!
//! [time]
//! dt = 1e-3
//! t_end = 5.0
//!
//! [initial]
//! kind = "gaussian-bump"
//! mass = 18.85
//! width = 0.2
//! ```
//!
//! Unknown keys are rejected. Relative file paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{self, BlowupDatumParams, SweepDatum};
use crate::grid::{DomainKind, DomainSpec, Field, Grid};
use crate::motility::{Motility, Table};
use crate::solver::{RunSettings, DEFAULT_CEILING};

fn default_tau() -> f64 {
    1.0
}
fn default_cadence() -> usize {
    10
}
fn default_ceiling() -> f64 {
    DEFAULT_CEILING
}
fn default_scale() -> f64 {
    1.0
}
fn default_damping() -> f64 {
    experiments::DEFAULT_DAMPING
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub kind: DomainKind,
    pub extent: Vec<f64>,
    pub resolution: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    ExpDecay,
    Power,
    Gaussian,
    DoubleExp,
    Tabulated,
}

impl std::str::FromStr for FamilyName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exp-decay" => Ok(Self::ExpDecay),
            "power" => Ok(Self::Power),
            "gaussian" => Ok(Self::Gaussian),
            "double-exp" => Ok(Self::DoubleExp),
            "tabulated" => Ok(Self::Tabulated),
            other => Err(format!(
                "unknown family `{other}` (expected exp-decay, power, gaussian, double-exp or tabulated)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotilitySection {
    pub family: FamilyName,
    /// Exponent of the power family.
    pub k: Option<f64>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub floor: Option<f64>,
    pub anchor: Option<f64>,
    /// Two-column CSV `s,gamma` for the tabulated family.
    pub table: Option<PathBuf>,
}

impl MotilitySection {
    pub fn exp_decay() -> Self {
        Self { family: FamilyName::ExpDecay, k: None, scale: 1.0, floor: None, anchor: None, table: None }
    }

    pub fn build(&self) -> Result<Motility> {
        build_motility(self.family, self.k, self.table.as_deref(), self.scale, self.floor, self.anchor)
    }
}

/// Assembles a motility from its family name and optional parameters.
pub fn build_motility(
    family: FamilyName,
    k: Option<f64>,
    table: Option<&Path>,
    scale: f64,
    floor: Option<f64>,
    anchor: Option<f64>,
) -> Result<Motility> {
    let mut m = match family {
        FamilyName::ExpDecay => Motility::exp_decay(),
        FamilyName::Gaussian => Motility::gaussian(),
        FamilyName::DoubleExp => Motility::double_exp(),
        FamilyName::Power => {
            let k = k.ok_or_else(|| Error::validation("motility.k", "required for the power family"))?;
            Motility::power(k).map_err(|e| Error::validation("motility.k", e.to_string()))?
        }
        FamilyName::Tabulated => {
            let path = table.ok_or_else(|| Error::validation("motility.table", "required for the tabulated family"))?;
            Motility::tabulated(Table::from_csv(path)?)
        }
    };
    if family != FamilyName::Power && k.is_some() {
        return Err(Error::validation("motility.k", "only the power family takes an exponent"));
    }
    m = m.with_scale(scale).map_err(|e| Error::validation("motility.scale", e.to_string()))?;
    if let Some(f) = floor {
        m = m.with_floor(f).map_err(|e| Error::validation("motility.floor", e.to_string()))?;
    }
    if let Some(a) = anchor {
        m = m.with_anchor(a).map_err(|e| Error::validation("motility.anchor", e.to_string()))?;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSection {
    Constants {
        u: f64,
        v: f64,
        /// Relative amplitude of a seeded uniform perturbation of `u`.
        #[serde(default)]
        perturbation: f64,
    },
    GaussianBump {
        mass: f64,
        width: f64,
        center: Option<Vec<f64>>,
    },
    #[serde(alias = "paper-blowup")]
    Blowup {
        mass: f64,
        lambda: f64,
        r: f64,
        r1: f64,
        center: Option<Vec<f64>>,
    },
    FromFile {
        u: PathBuf,
        v: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub snapshot_every: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out(), name: None, seed: 0, snapshot_every: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepDatumName {
    GaussianBump,
    #[serde(alias = "paper-blowup")]
    Blowup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub masses: Vec<f64>,
    pub datum: SweepDatumName,
    pub width: Option<f64>,
    pub lambda: Option<f64>,
    pub r: Option<f64>,
    pub r1: Option<f64>,
    /// Worker threads; 0 or absent uses the available parallelism.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySection {
    pub mass: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Relative amplitude of a seeded perturbation of the constant start.
    #[serde(default)]
    pub perturbation: f64,
    /// Also integrate the evolution problem to `time.t_end` and compare.
    #[serde(default)]
    pub compare: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    domain: DomainSection,
    #[serde(default = "MotilitySection::exp_decay")]
    motility: MotilitySection,
    time: TimeSection,
    initial: Option<InitialSection>,
    #[serde(default)]
    output: OutputSection,
    sweep: Option<SweepSection>,
    stationary: Option<StationarySection>,
}

/// A validated configuration together with its verbatim text.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub motility: MotilitySection,
    pub time: TimeSection,
    pub initial: Option<InitialSection>,
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
    pub stationary: Option<StationarySection>,
    #[serde(skip)]
    pub source: String,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Reads and validates a config file. Referenced files must exist.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base, true)
}

/// Parses config text; relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path, check_files: bool) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::ConfigParse { line, message: e.message().to_owned() }
    })?;
    let mut cfg = RunConfig {
        domain: DomainSpec {
            kind: raw.domain.kind,
            extent: raw.domain.extent,
            resolution: raw.domain.resolution,
        },
        motility: raw.motility,
        time: raw.time,
        initial: raw.initial,
        output: raw.output,
        sweep: raw.sweep,
        stationary: raw.stationary,
        source: text.to_owned(),
        base_dir: base_dir.to_path_buf(),
    };
    cfg.resolve_paths();
    cfg.validate(check_files)?;
    Ok(cfg)
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be positive and finite, got {x}")))
    }
}

fn require_file(field: &str, path: &Path, check: bool) -> Result<()> {
    if check && !path.is_file() {
        return Err(Error::validation(field, format!("file {} does not exist", path.display())));
    }
    Ok(())
}

impl RunConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn resolve_paths(&mut self) {
        if let Some(t) = self.motility.table.take() {
            self.motility.table = Some(self.resolve(&t));
        }
        if let Some(InitialSection::FromFile { u, v }) = &self.initial {
            let (u, v) = (self.resolve(u), self.resolve(v));
            self.initial = Some(InitialSection::FromFile { u, v });
        }
    }

    fn validate(&self, check_files: bool) -> Result<()> {
        self.domain
            .validate()
            .map_err(|e| Error::validation("domain", e.to_string()))?;

        if let Some(t) = &self.motility.table {
            require_file("motility.table", t, check_files)?;
        }
        if check_files || self.motility.table.is_none() {
            self.motility.build()?;
        }

        let t = &self.time;
        positive("time.tau", t.tau)?;
        positive("time.dt", t.dt)?;
        positive("time.t_end", t.t_end)?;
        if t.dt >= t.t_end {
            return Err(Error::validation("time.dt", format!("dt = {} must be below t_end = {}", t.dt, t.t_end)));
        }
        if t.cadence == 0 {
            return Err(Error::validation("time.cadence", "must be at least 1"));
        }
        positive("time.ceiling", t.ceiling)?;

        match &self.initial {
            Some(InitialSection::Constants { u, v, perturbation }) => {
                if !(*u >= 0.0 && u.is_finite()) {
                    return Err(Error::validation("initial.u", "must be non-negative"));
                }
                if !(*v >= 0.0 && v.is_finite()) {
                    return Err(Error::validation("initial.v", "must be non-negative"));
                }
                if !(0.0..1.0).contains(perturbation) {
                    return Err(Error::validation("initial.perturbation", "must lie in [0, 1)"));
                }
            }
            Some(InitialSection::GaussianBump { mass, width, .. }) => {
                positive("initial.mass", *mass)?;
                positive("initial.width", *width)?;
            }
            Some(InitialSection::Blowup { mass, lambda, r, r1, center }) => {
                let p = BlowupDatumParams { mass_target: *mass, lambda: *lambda, r: *r, r1: *r1, center: center.clone() };
                p.validate().map_err(|e| Error::validation("initial", e.to_string()))?;
            }
            Some(InitialSection::FromFile { u, v }) => {
                require_file("initial.u", u, check_files)?;
                require_file("initial.v", v, check_files)?;
            }
            None => {}
        }

        if let Some(s) = &self.sweep {
            for m in &s.masses {
                positive("sweep.masses", *m)?;
            }
            self.sweep_datum()?;
        }
        if let Some(s) = &self.stationary {
            positive("stationary.mass", s.mass)?;
            if !(s.damping > 0.0 && s.damping <= 1.0) {
                return Err(Error::validation("stationary.damping", "must lie in (0, 1]"));
            }
            if !(0.0..1.0).contains(&s.perturbation) {
                return Err(Error::validation("stationary.perturbation", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            dt: self.time.dt,
            t_end: self.time.t_end,
            cadence: self.time.cadence,
            ceiling: self.time.ceiling,
            snapshot_every: self.output.snapshot_every,
        }
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>> {
        Grid::build(self.domain.clone())
    }

    pub fn build_motility(&self) -> Result<Motility> {
        self.motility.build()
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.output.seed)
    }

    /// Initial `(u0, v0)` on `grid`.
    pub fn build_initial(&self, grid: &Arc<Grid>) -> Result<(Field, Field)> {
        let init = self
            .initial
            .as_ref()
            .ok_or_else(|| Error::validation("initial", "section required for this command"))?;
        match init {
            InitialSection::Constants { u, v, perturbation } => {
                let mut rng = self.rng();
                let uf = Field::from_fn(grid.clone(), |_| u * (1.0 + perturbation * rng.gen_range(-1.0..=1.0)));
                Ok((uf, Field::constant(grid.clone(), *v)))
            }
            InitialSection::GaussianBump { mass, width, center } => {
                experiments::gaussian_bump(grid, *mass, *width, center.as_deref())
            }
            InitialSection::Blowup { mass, lambda, r, r1, center } => {
                let p = BlowupDatumParams { mass_target: *mass, lambda: *lambda, r: *r, r1: *r1, center: center.clone() };
                let (u, v, _) = experiments::blowup_datum(&p, grid)?;
                Ok((u, v))
            }
            InitialSection::FromFile { u, v } => Ok((Field::read_csv(grid.clone(), u)?, Field::read_csv(grid.clone(), v)?)),
        }
    }

    pub fn sweep_datum(&self) -> Result<SweepDatum> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::validation("sweep", "section required for this command"))?;
        let need = |name: &str, x: Option<f64>| {
            x.ok_or_else(|| Error::validation(format!("sweep.{name}"), "required for this datum"))
        };
        Ok(match s.datum {
            SweepDatumName::GaussianBump => SweepDatum::GaussianBump { width: need("width", s.width)? },
            SweepDatumName::Blowup => SweepDatum::Blowup {
                lambda: need("lambda", s.lambda)?,
                r: need("r", s.r)?,
                r1: need("r1", s.r1)?,
            },
        })
    }

    /// Starting guess for the stationary solver: the mean value, perturbed
    /// by a seeded relative amplitude.
    pub fn stationary_init(&self, grid: &Arc<Grid>) -> Result<Field> {
        let s = self
            .stationary
            .as_ref()
            .ok_or_else(|| Error::validation("stationary", "section required for this command"))?;
        let mean = s.mass / grid.total_weight();
        let mut rng = self.rng();
        Ok(Field::from_fn(grid.clone(), |_| mean * (1.0 + s.perturbation * rng.gen_range(-1.0..=1.0))))
    }

    /// Config of a single sweep row: exponential motility, the sweep datum
    /// at `mass`, no sweep or stationary section. Its text is regenerated so
    /// the row's run directory is self-describing.
    pub fn for_sweep_row(&self, mass: f64) -> Result<RunConfig> {
        let initial = match self.sweep_datum()? {
            SweepDatum::GaussianBump { width } => InitialSection::GaussianBump { mass, width, center: None },
            SweepDatum::Blowup { lambda, r, r1 } => {
                InitialSection::Blowup { mass, lambda, r, r1, center: None }
            }
        };
        let raw = RawConfig {
            domain: DomainSection {
                kind: self.domain.kind,
                extent: self.domain.extent.clone(),
                resolution: self.domain.resolution.clone(),
            },
            motility: MotilitySection::exp_decay(),
            time: self.time.clone(),
            initial: Some(initial),
            output: OutputSection { name: None, ..self.output.clone() },
            sweep: None,
            stationary: None,
        };
        let text = toml::to_string(&raw).map_err(|e| Error::validation("sweep", e.to_string()))?;
        parse_config_str(&text, &self.base_dir, true)
    }

    /// SHA-256 of the verbatim config text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }
}
