//! TOML run configuration. Every function on the base torus is a constant
//! plus a list of Fourier modes.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use ymglue::balancing::{scale_equation_data, BaseGrid, FiberQuadrature};
use ymglue::fourier::{FourierSeries, MAX_BASE_DIM};
use ymglue::gluing::{GeometryData, GluingData};
use ymglue::grid::ProductGrid;
use ymglue::ops::WeightSpec;

/// Largest fiber grid size per axis.
pub const MAX_FIBER_N: usize = 33;
/// Largest number of points per base axis.
pub const MAX_BASE_COUNT: usize = 64;
/// Largest total number of base points.
pub const MAX_BASE_POINTS: usize = 256;
/// Smallest admissible box radius in units of `ε`.
pub const MIN_RADIUS_FACTOR: f64 = 8.0;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
}

impl SeriesSpec {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, modes: Vec::new() }
    }

    fn build(&self, lengths: &[f64]) -> Result<FourierSeries, ConfigError> {
        let mut f = FourierSeries::constant(lengths, self.constant);
        for m in &self.modes {
            if m.k.len() != lengths.len() {
                return Err(bad(format!("mode {:?} does not match base dimension {}", m.k, lengths.len())));
            }
            f = f.with_mode(&m.k, m.cos, m.sin);
        }
        Ok(f)
    }
}

/// A series attached to tensor indices.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IndexedSeries {
    pub indices: Vec<usize>,
    #[serde(flatten)]
    pub series: SeriesSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub base_lengths: Vec<f64>,
    pub base_counts: Vec<usize>,
    /// Points per fiber axis.
    pub fiber_n: usize,
    /// Fiber box radius in units of `ε`.
    pub radius_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { base_lengths: vec![TAU], base_counts: vec![8], fiber_n: 13, radius_factor: 8.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub eps: f64,
    pub lambda: SeriesSpec,
    /// `v` components, indexed by `[ρ]`.
    pub v: Vec<IndexedSeries>,
    /// `θ` entries, indexed by `[base direction, self-dual component]`.
    pub theta: Vec<IndexedSeries>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            eps: 0.1,
            lambda: SeriesSpec::constant(1.0),
            v: vec![IndexedSeries {
                indices: vec![0],
                series: SeriesSpec { constant: 0.0, modes: vec![ModeSpec { k: vec![1], cos: 0.0, sin: 0.3 }] },
            }],
            theta: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    /// Second fundamental form, indices `[i, j, ρ]`.
    pub h: Vec<IndexedSeries>,
    /// Mixed curvature, indices `[i, ρ, σ, j]`.
    pub r_mixed: Vec<IndexedSeries>,
    /// Normal curvature, indices `[a, r, s, b]`.
    pub r_normal: Vec<IndexedSeries>,
}

/// Geometry built so that the scale function solves its linear equation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScaleEquationSpec {
    pub c: f64,
    pub s: f64,
    pub q0: SeriesSpec,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    1.05
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSpec {
    pub nu: f64,
    pub gamma: f64,
}

impl Default for WeightsSpec {
    fn default() -> Self {
        Self { nu: 0.5, gamma: 0.25 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub eps: Vec<f64>,
    /// Manufactured fields per `ε` in the uniform-estimate sweep.
    pub draws: usize,
    /// Fiber points per axis in the uniform-estimate sweep.
    pub probe_fiber_n: usize,
    /// Quadrature box radius in units of `ε` for the balance sweep.
    pub quadrature_radius_factor: f64,
    pub quadrature_nodes: [usize; 2],
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            eps: vec![0.2, 0.1, 0.05, 0.025],
            draws: 3,
            probe_fiber_n: 13,
            quadrature_radius_factor: 16.0,
            quadrature_nodes: [40, 6],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    /// Sign in front of `[B, B]` in the curvature; anything but 1 is a
    /// negative control.
    pub bracket_sign: f64,
    /// Lattice cells per axis for the energy quadrature.
    pub energy_cells: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { bracket_sign: 1.0, energy_cells: 64 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub data: DataSpec,
    pub geometry: GeometrySpec,
    pub scale_equation: Option<ScaleEquationSpec>,
    pub weights: WeightsSpec,
    pub sweep: SweepSpec,
    pub verify: VerifySpec,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

/// Validated objects built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Built {
    pub gd: GluingData,
    pub geo: GeometryData,
    pub grid: ProductGrid,
    pub weights: WeightSpec,
}

fn check_eps(eps: f64) -> Result<(), ConfigError> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(bad(format!("eps must lie in (0, 0.5], got {eps}")));
    }
    Ok(())
}

fn check_indices(what: &str, idx: &[usize], bounds: &[usize]) -> Result<(), ConfigError> {
    if idx.len() != bounds.len() || idx.iter().zip(bounds).any(|(i, b)| i >= b) {
        return Err(bad(format!("{what} indices {idx:?} out of range {bounds:?}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Range checks that do not need the data objects.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        let m = g.base_lengths.len();
        if m == 0 || m > MAX_BASE_DIM {
            return Err(bad(format!("base dimension must be 1..={MAX_BASE_DIM}, got {m}")));
        }
        if g.base_counts.len() != m {
            return Err(bad("base_counts and base_lengths differ in length"));
        }
        if g.base_lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(bad("base lengths must be positive"));
        }
        if g.base_counts.iter().any(|&c| c == 0 || c > MAX_BASE_COUNT) {
            return Err(bad(format!("base counts must lie in 1..={MAX_BASE_COUNT}")));
        }
        if g.base_counts.iter().product::<usize>() > MAX_BASE_POINTS {
            return Err(bad(format!("at most {MAX_BASE_POINTS} base points")));
        }
        if g.fiber_n < 5 || g.fiber_n > MAX_FIBER_N || g.fiber_n % 2 == 0 {
            return Err(bad(format!("fiber_n must be odd and in 5..={MAX_FIBER_N}")));
        }
        if !(g.radius_factor >= MIN_RADIUS_FACTOR) {
            return Err(bad(format!("radius_factor must be at least {MIN_RADIUS_FACTOR}")));
        }
        check_eps(self.data.eps)?;
        for &e in &self.sweep.eps {
            check_eps(e)?;
        }
        if self.sweep.draws == 0 || self.sweep.probe_fiber_n < 5 || self.sweep.probe_fiber_n > MAX_FIBER_N {
            return Err(bad("sweep needs draws ≥ 1 and probe_fiber_n in 5..=33"));
        }
        if !(self.sweep.quadrature_radius_factor >= MIN_RADIUS_FACTOR) || self.sweep.quadrature_nodes.contains(&0) {
            return Err(bad("invalid balance quadrature"));
        }
        if self.verify.energy_cells == 0 || self.verify.energy_cells > 64 {
            return Err(bad("energy_cells must lie in 1..=64"));
        }
        if !self.verify.bracket_sign.is_finite() {
            return Err(bad("bracket_sign must be finite"));
        }
        WeightSpec::new(self.weights.nu, self.weights.gamma, self.data.eps).map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    /// At least three `ε` values are needed for a sweep.
    pub fn sweep_list(&self) -> Result<&[f64], ConfigError> {
        if self.sweep.eps.len() < 3 {
            return Err(bad(format!("sweep list needs at least 3 values, got {}", self.sweep.eps.len())));
        }
        Ok(&self.sweep.eps)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn fiber_quadrature(&self, eps: f64) -> FiberQuadrature {
        let [nr, na] = self.sweep.quadrature_nodes;
        FiberQuadrature::for_eps(eps).with_rmax(self.sweep.quadrature_radius_factor * eps).with_nodes(nr, na)
    }

    fn geometry(&self, l: &[f64]) -> Result<GeometryData, ConfigError> {
        let m = l.len();
        let mut geo = GeometryData::flat(l);
        for e in &self.geometry.h {
            check_indices("h", &e.indices, &[m, m, 4])?;
            let i = &e.indices;
            geo = geo.with_h(i[0], i[1], i[2], e.series.build(l)?);
        }
        for e in &self.geometry.r_mixed {
            check_indices("r_mixed", &e.indices, &[m, 4, 4, m])?;
            let i = &e.indices;
            geo = geo.with_r_mixed(i[0], i[1], i[2], i[3], e.series.build(l)?);
        }
        for e in &self.geometry.r_normal {
            check_indices("r_normal", &e.indices, &[4, 4, 4, 4])?;
            let i = &e.indices;
            geo = geo.with_r_normal(i[0], i[1], i[2], i[3], e.series.build(l)?);
        }
        Ok(geo)
    }

    fn gluing(&self, l: &[f64]) -> Result<GluingData, ConfigError> {
        let m = l.len();
        let mut gd = GluingData::flat(self.data.eps, l).with_lambda(self.data.lambda.build(l)?);
        for e in &self.data.v {
            check_indices("v", &e.indices, &[4])?;
            gd = gd.with_v(e.indices[0], e.series.build(l)?);
        }
        for e in &self.data.theta {
            check_indices("theta", &e.indices, &[m, 3])?;
            gd = gd.with_theta(e.indices[0], e.indices[1], e.series.build(l)?);
        }
        Ok(gd)
    }

    /// Builds and validates the gluing data, geometry and weights on the
    /// base grid alone.
    pub fn build_data(&self) -> Result<(GluingData, GeometryData, BaseGrid, WeightSpec), ConfigError> {
        self.validate()?;
        let l = &self.grid.base_lengths;
        let eps = self.data.eps;
        let base = BaseGrid::new(l, &self.grid.base_counts).map_err(|e| bad(e.to_string()))?;
        let (gd, geo) = match &self.scale_equation {
            Some(se) => {
                if !self.geometry.h.is_empty() || !self.geometry.r_mixed.is_empty() || !self.geometry.r_normal.is_empty() {
                    return Err(bad("scale_equation builds its own geometry; leave [geometry] empty"));
                }
                let d = scale_equation_data(eps, &base, se.c, se.s, &se.q0.build(l)?, se.floor)
                    .map_err(|e| bad(e.to_string()))?;
                let mut gd = d.gd;
                for e in &self.data.v {
                    check_indices("v", &e.indices, &[4])?;
                    gd = gd.with_v(e.indices[0], e.series.build(l)?);
                }
                (gd, d.geo)
            }
            None => (self.gluing(l)?, self.geometry(l)?),
        };
        geo.validate().map_err(|e| bad(e.to_string()))?;
        gd.validate().map_err(|e| bad(e.to_string()))?;
        let weights = WeightSpec::new(self.weights.nu, self.weights.gamma, eps).map_err(|e| bad(e.to_string()))?;
        Ok((gd, geo, base, weights))
    }

    /// [`Self::build_data`] plus the product grid.
    pub fn build(&self) -> Result<Built, ConfigError> {
        let (gd, geo, _, weights) = self.build_data()?;
        let grid = ProductGrid::scaled(&self.grid.base_counts, &self.grid.base_lengths, self.grid.fiber_n, self.grid.radius_factor, gd.eps)
            .map_err(|e| bad(e.to_string()))?;
        Ok(Built { gd, geo, grid, weights })
    }
}
