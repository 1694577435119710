//! Structured cell-centred grids with a conservative Neumann Laplacian.
//!
//! Every grid is described by its cell centres, the cell volumes (used as
//! midpoint quadrature weights) and a list of interior faces. A face carries
//! the conductance `area / distance` between the two cells it separates, so
//! the discrete Laplacian of `f` at cell `i` is
//!
//! ```text
//! (L f)_i = (1 / w_i) * sum_{faces (i, j)} c_ij (f_j - f_i)
//! ```
//!
//! Boundary faces carry zero flux, which realises the homogeneous Neumann
//! condition. With this form `W L` is symmetric, constants lie in the kernel
//! exactly, and `sum_i w_i (L f)_i` telescopes to zero.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible cell count per axis.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Interval,
    DiskRadial,
    Rectangle,
}

impl DomainKind {
    pub fn axes(self) -> usize {
        match self {
            DomainKind::Interval | DomainKind::DiskRadial => 1,
            DomainKind::Rectangle => 2,
        }
    }

    fn coord_names(self) -> &'static [&'static str] {
        match self {
            DomainKind::Interval => &["x"],
            DomainKind::DiskRadial => &["r"],
            DomainKind::Rectangle => &["x", "y"],
        }
    }
}

/// Geometry and resolution of a domain. For the disk, `extent` holds the
/// radius; otherwise the side lengths. The interval is `[0, L]` and the
/// rectangle `[0, Lx] x [0, Ly]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub extent: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl DomainSpec {
    pub fn interval(length: f64, cells: usize) -> Self {
        Self {
            kind: DomainKind::Interval,
            extent: vec![length],
            resolution: vec![cells],
        }
    }

    pub fn disk(radius: f64, cells: usize) -> Self {
        Self {
            kind: DomainKind::DiskRadial,
            extent: vec![radius],
            resolution: vec![cells],
        }
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self {
            kind: DomainKind::Rectangle,
            extent: vec![lx, ly],
            resolution: vec![nx, ny],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes = self.kind.axes();
        if self.extent.len() != axes {
            return Err(Error::param(
                "extent",
                format!("{:?} needs {axes} extent value(s), got {}", self.kind, self.extent.len()),
            ));
        }
        if self.resolution.len() != axes {
            return Err(Error::param(
                "resolution",
                format!("{:?} needs {axes} cell count(s), got {}", self.kind, self.resolution.len()),
            ));
        }
        if let Some(e) = self.extent.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::param("extent", format!("must be positive and finite, got {e}")));
        }
        if let Some(n) = self.resolution.iter().find(|n| **n < MIN_RESOLUTION) {
            return Err(Error::param(
                "resolution",
                format!("at least {MIN_RESOLUTION} cells per axis required, got {n}"),
            ));
        }
        Ok(())
    }

    /// Exact measure of the continuous domain.
    pub fn measure(&self) -> f64 {
        match self.kind {
            DomainKind::Interval => self.extent[0],
            DomainKind::DiskRadial => std::f64::consts::PI * self.extent[0] * self.extent[0],
            DomainKind::Rectangle => self.extent[0] * self.extent[1],
        }
    }

    /// Cell widths per axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.extent
            .iter()
            .zip(&self.resolution)
            .map(|(e, n)| e / *n as f64)
            .collect()
    }
}

/// Interior face between cells `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    pub conductance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    /// Cells `0..n` connected in a line; face `k` joins `k` and `k + 1`.
    Chain,
    /// Row-major `nx * ny` lattice, node index `i * ny + j`.
    Lattice { nx: usize, ny: usize },
}

#[derive(Debug)]
pub struct Grid {
    spec: DomainSpec,
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    faces: Vec<Face>,
    topology: Topology,
}

impl Grid {
    pub fn build(spec: DomainSpec) -> Result<Arc<Grid>> {
        spec.validate()?;
        let grid = match spec.kind {
            DomainKind::Interval => {
                let n = spec.resolution[0];
                let h = spec.extent[0] / n as f64;
                let coords = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
                let faces = (0..n - 1)
                    .map(|k| Face { a: k, b: k + 1, conductance: 1.0 / h })
                    .collect();
                Grid {
                    dim: 1,
                    coords,
                    weights: vec![h; n],
                    faces,
                    topology: Topology::Chain,
                    spec,
                }
            }
            DomainKind::DiskRadial => {
                let n = spec.resolution[0];
                let dr = spec.extent[0] / n as f64;
                let two_pi = 2.0 * std::f64::consts::PI;
                let coords: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * dr).collect();
                // annulus area pi (r_out^2 - r_in^2) equals 2 pi r_mid dr exactly
                let weights = coords.iter().map(|r| two_pi * r * dr).collect();
                let faces = (0..n - 1)
                    .map(|k| {
                        let r_face = (k + 1) as f64 * dr;
                        Face { a: k, b: k + 1, conductance: two_pi * r_face / dr }
                    })
                    .collect();
                Grid {
                    dim: 1,
                    coords,
                    weights,
                    faces,
                    topology: Topology::Chain,
                    spec,
                }
            }
            DomainKind::Rectangle => {
                let (nx, ny) = (spec.resolution[0], spec.resolution[1]);
                let (hx, hy) = (spec.extent[0] / nx as f64, spec.extent[1] / ny as f64);
                let mut coords = Vec::with_capacity(2 * nx * ny);
                for i in 0..nx {
                    for j in 0..ny {
                        coords.push((i as f64 + 0.5) * hx);
                        coords.push((j as f64 + 0.5) * hy);
                    }
                }
                let idx = |i: usize, j: usize| i * ny + j;
                let mut faces = Vec::with_capacity(2 * nx * ny);
                for i in 0..nx {
                    for j in 0..ny {
                        if j + 1 < ny {
                            faces.push(Face { a: idx(i, j), b: idx(i, j + 1), conductance: hx / hy });
                        }
                        if i + 1 < nx {
                            faces.push(Face { a: idx(i, j), b: idx(i + 1, j), conductance: hy / hx });
                        }
                    }
                }
                Grid {
                    dim: 2,
                    coords,
                    weights: vec![hx * hy; nx * ny],
                    faces,
                    topology: Topology::Lattice { nx, ny },
                    spec,
                }
            }
        };
        Ok(Arc::new(grid))
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn kind(&self) -> DomainKind {
        self.spec.kind
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Coordinates of node `i` (one entry per axis).
    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Distance of node `i` from the point `center` in physical space. On the
    /// radially reduced disk the center is the origin and the node radius is
    /// returned.
    pub fn distance_from(&self, i: usize, center: &[f64]) -> f64 {
        match self.spec.kind {
            DomainKind::DiskRadial => self.coords[i],
            _ => self
                .node(i)
                .iter()
                .zip(center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Discrete Neumann Laplacian.
    pub fn apply_laplacian(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.len());
        let mut out = vec![0.0; f.len()];
        for face in &self.faces {
            let flux = face.conductance * (f[face.b] - f[face.a]);
            out[face.a] += flux;
            out[face.b] -= flux;
        }
        out.iter_mut().zip(&self.weights).for_each(|(o, w)| *o /= w);
        out
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Weighted inner product `sum_i w_i f_i g_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// Face-based Dirichlet energy, equal to `-<f, L f>` up to round-off.
    pub fn grad_norm_sq(&self, f: &[f64]) -> f64 {
        self.faces
            .iter()
            .map(|face| {
                let d = f[face.b] - f[face.a];
                face.conductance * d * d
            })
            .sum()
    }

    /// Applies `(scale * C) x` where `C` is the face graph Laplacian
    /// (positive semidefinite, `C = -W L`).
    pub(crate) fn apply_graph_laplacian(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for face in &self.faces {
            let flux = scale * face.conductance * (x[face.a] - x[face.b]);
            out[face.a] += flux;
            out[face.b] -= flux;
        }
    }

    /// Weighted mean over the domain.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.integrate(f) / self.total_weight()
    }

    pub(crate) fn csv_header(&self) -> String {
        let mut h = self.spec.kind.coord_names().join(",");
        h.push_str(",value");
        h
    }
}

/// A real function sampled at the nodes of a grid.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) && self.values == other.values
    }
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::param(
                "values",
                format!("expected {} nodes, got {}", grid.len(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field construction"));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = grid.nodes().map(&mut f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn laplacian(&self) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.grid.apply_laplacian(&self.values),
        }
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grid.grad_norm_sq(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_i |self_i - other_i|`.
    pub fn distance_sup(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.grid.csv_header();
        out.push('\n');
        for (node, v) in self.grid.nodes().zip(&self.values) {
            for c in node {
                let _ = write!(out, "{c:.16e},");
            }
            let _ = writeln!(out, "{v:.16e}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Reads a snapshot written by [`Field::write_csv`]; node coordinates
    /// must match the grid.
    pub fn read_csv(grid: Arc<Grid>, path: &Path) -> Result<Field> {
        let bad = |message: String| Error::Format { path: path.to_path_buf(), message };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != grid.csv_header() {
            return Err(bad(format!("header `{header}` does not match `{}`", grid.csv_header())));
        }
        let dim = grid.dim();
        let mut values = Vec::with_capacity(grid.len());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
            if cols.len() != dim + 1 {
                return Err(bad(format!("row {}: expected {} columns", row + 1, dim + 1)));
            }
            if row >= grid.len() {
                return Err(bad(format!("more than {} rows", grid.len())));
            }
            let node = grid.node(row);
            let scale = grid.spec().extent.iter().fold(0.0f64, |m, e| m.max(*e));
            if node.iter().zip(&cols).any(|(a, b)| (a - b).abs() > 1e-9 * scale) {
                return Err(bad(format!("row {}: coordinates do not match the grid", row + 1)));
            }
            values.push(cols[dim]);
        }
        if values.len() != grid.len() {
            return Err(bad(format!("expected {} rows, got {}", grid.len(), values.len())));
        }
        Field::new(grid, values).map_err(|e| bad(e.to_string()))
    }
}
