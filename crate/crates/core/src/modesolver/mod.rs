//! Guided modes of a diffused channel waveguide by the effective-index method.
//!
//! The depth direction (exponential index profile under an air cover) is solved
//! first; each depth mode's effective index then forms the core of a lateral
//! slab of the channel width. The 2D mode is the product of the two 1D
//! profiles. Mode labels `ij` count nodes along the width (`i`) and the depth
//! (`j`).

mod overlap;
pub mod slab;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2, RealGrid};
use crate::interp::Pchip;
use crate::material::{Axis, Crystal};

pub use overlap::{mode_overlap, nonlinear_overlap};
pub use slab::{
    solve_depth_slab, solve_lateral_graded, solve_lateral_slab, DepthProfile, DepthSlab, SlabMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

/// The three interacting fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Wave {
    #[serde(rename = "P")]
    Pump,
    H,
    V,
}

impl fmt::Display for Wave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wave::Pump => "P",
            Wave::H => "H",
            Wave::V => "V",
        })
    }
}

/// Node counts along the width (`i`) and the depth (`j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeLabel {
    pub i: u8,
    pub j: u8,
}

impl ModeLabel {
    pub const FUNDAMENTAL: ModeLabel = ModeLabel { i: 0, j: 0 };

    pub fn new(i: u8, j: u8) -> Self {
        ModeLabel { i, j }
    }

    pub fn is_fundamental(&self) -> bool {
        *self == Self::FUNDAMENTAL
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.i, self.j)
    }
}

impl std::str::FromStr for ModeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s
            .chars()
            .map(|c| c.to_digit(10).map(|d| d as u8))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidInput(format!("mode label '{s}' is not two digits")))?;
        match digits.as_slice() {
            [i, j] => Ok(ModeLabel::new(*i, *j)),
            _ => Err(Error::InvalidInput(format!(
                "mode label '{s}' is not two digits"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LateralShape {
    Step,
    Graded { edge_um: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveguideGeometry {
    pub width_um: f64,
    pub depth_um: f64,
    pub delta_n_h: f64,
    pub delta_n_v: f64,
    pub lateral: LateralShape,
    pub depth_profile: DepthProfile,
    pub length_mm: f64,
    pub poling_period_um: f64,
    pub cover_index: f64,
    pub axis_h: Axis,
    pub axis_v: Axis,
    pub pump_polarization: Polarization,
}

impl Default for WaveguideGeometry {
    fn default() -> Self {
        WaveguideGeometry {
            width_um: 2.0,
            depth_um: 5.0,
            delta_n_h: 0.02,
            delta_n_v: 0.02,
            lateral: LateralShape::Step,
            depth_profile: DepthProfile::IndexExponential,
            length_mm: 1.0,
            poling_period_um: 9.8,
            cover_index: 1.0,
            axis_h: Axis::Y,
            axis_v: Axis::Z,
            pump_polarization: Polarization::H,
        }
    }
}

impl WaveguideGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width_um", self.width_um),
            ("depth_um", self.depth_um),
            ("delta_n_h", self.delta_n_h),
            ("delta_n_v", self.delta_n_v),
            ("length_mm", self.length_mm),
            ("poling_period_um", self.poling_period_um),
            ("cover_index", self.cover_index),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        if let LateralShape::Graded { edge_um } = self.lateral {
            if !(edge_um > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "graded edge_um must be > 0, got {edge_um}"
                )));
            }
        }
        if self.axis_h == self.axis_v {
            return Err(Error::InvalidInput(
                "H and V must map to different crystal axes".into(),
            ));
        }
        Ok(())
    }

    pub fn polarization(&self, wave: Wave) -> Polarization {
        match wave {
            Wave::Pump => self.pump_polarization,
            Wave::H => Polarization::H,
            Wave::V => Polarization::V,
        }
    }

    pub fn axis(&self, wave: Wave) -> Axis {
        match self.polarization(wave) {
            Polarization::H => self.axis_h,
            Polarization::V => self.axis_v,
        }
    }

    pub fn delta_n(&self, wave: Wave) -> f64 {
        match self.polarization(wave) {
            Polarization::H => self.delta_n_h,
            Polarization::V => self.delta_n_v,
        }
    }

    pub fn length_um(&self) -> f64 {
        self.length_mm * 1e3
    }

    /// Default profile grid: 512 × 512 over 6w × 6d, the depth window starting
    /// slightly above the surface.
    pub fn mode_grid(&self) -> Grid2 {
        self.mode_grid_sized(512, 512)
    }

    pub fn mode_grid_sized(&self, nx: usize, ny: usize) -> Grid2 {
        let half = 3.0 * self.width_um;
        let depth = 6.0 * self.depth_um;
        Grid2::spanning(nx, ny, -half, half, -0.05 * depth, 0.95 * depth)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in [
            self.width_um,
            self.depth_um,
            self.delta_n_h,
            self.delta_n_v,
            self.cover_index,
        ] {
            v.to_bits().hash(&mut h);
        }
        match self.lateral {
            LateralShape::Step => 0u64.hash(&mut h),
            LateralShape::Graded { edge_um } => edge_um.to_bits().hash(&mut h),
        }
        self.depth_profile.hash(&mut h);
        (self.axis_h, self.axis_v, self.pump_polarization).hash(&mut h);
        h.finish()
    }
}

/// Geometry plus bulk dispersion: everything a mode solve needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveguide {
    pub geometry: WaveguideGeometry,
    pub crystal: Crystal,
}

/// A 2D mode before its profile is sampled.
#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub label: ModeLabel,
    pub n_eff: f64,
    pub lateral: SlabMode,
    pub depth: SlabMode,
}

impl ModeSolution {
    /// Continuum-normalized amplitude `X_i(x)·Y_j(y)`.
    pub fn amplitude(&self, x: f64, y: f64) -> f64 {
        self.lateral.value(x) * self.depth.value(y)
    }
}

#[derive(Debug, Clone)]
pub struct GuidedMode {
    pub label: ModeLabel,
    pub wave: Wave,
    pub lambda_um: f64,
    pub n_eff: f64,
    pub lateral: SlabMode,
    pub depth: SlabMode,
    /// Amplitude on the solver grid with trapezoidal ∬u² dA = 1.
    pub profile: RealGrid,
}

impl GuidedMode {
    pub fn amplitude(&self, x: f64, y: f64) -> f64 {
        self.lateral.value(x) * self.depth.value(y)
    }

    pub fn intensity(&self) -> RealGrid {
        self.profile.map(|v| v * v)
    }

    pub fn propagation_constant(&self) -> f64 {
        propagation_constant(self.n_eff, self.lambda_um)
    }
}

/// β = 2π·n_eff/λ in rad/µm.
pub fn propagation_constant(n_eff: f64, lambda_um: f64) -> f64 {
    2.0 * PI * n_eff / lambda_um
}

impl Waveguide {
    pub fn new(geometry: WaveguideGeometry, crystal: Crystal) -> Result<Self> {
        geometry.validate()?;
        crystal.validate()?;
        Ok(Waveguide { geometry, crystal })
    }

    pub fn substrate_index(&self, wave: Wave, lambda_um: f64) -> Result<f64> {
        self.crystal
            .axis(self.geometry.axis(wave))
            .refractive_index(lambda_um)
    }

    /// All guided modes at `lambda_um`, sorted by descending n_eff.
    pub fn mode_solutions(&self, wave: Wave, lambda_um: f64) -> Result<Vec<ModeSolution>> {
        self.mode_solutions_up_to(wave, lambda_um, u8::MAX)
    }

    /// Guided modes whose labels are both at most `max_label`.
    pub fn mode_solutions_up_to(
        &self,
        wave: Wave,
        lambda_um: f64,
        max_label: u8,
    ) -> Result<Vec<ModeSolution>> {
        let g = &self.geometry;
        let n_sub = self.substrate_index(wave, lambda_um)?;
        let depth = DepthSlab {
            n_sub,
            delta_n: g.delta_n(wave),
            depth_um: g.depth_um,
            n_cover: g.cover_index,
            profile: g.depth_profile,
        }
        .solve_first(lambda_um, max_label as usize + 1)?;
        let mut out = Vec::new();
        for dm in depth {
            let lateral = match g.lateral {
                LateralShape::Step => solve_lateral_slab(dm.n_eff, n_sub, g.width_um, lambda_um)?,
                LateralShape::Graded { edge_um } => {
                    solve_lateral_graded(dm.n_eff, n_sub, g.width_um, edge_um, lambda_um)?
                }
            };
            for lm in lateral.into_iter().take(max_label as usize + 1) {
                out.push(ModeSolution {
                    label: ModeLabel::new(lm.nodes as u8, dm.nodes as u8),
                    n_eff: lm.n_eff,
                    lateral: lm,
                    depth: dm.clone(),
                });
            }
        }
        out.sort_by(|a, b| b.n_eff.partial_cmp(&a.n_eff).unwrap());
        Ok(out)
    }

    /// Labels and effective indices of the modes with both labels at most
    /// `max_label`.
    pub fn mode_indices(
        &self,
        wave: Wave,
        lambda_um: f64,
        max_label: u8,
    ) -> Result<Vec<(ModeLabel, f64)>> {
        Ok(self
            .mode_solutions_up_to(wave, lambda_um, max_label)?
            .into_iter()
            .map(|m| (m.label, m.n_eff))
            .collect())
    }

    /// Sample a solution on `grid`, renormalizing there.
    pub fn sample(
        &self,
        wave: Wave,
        lambda_um: f64,
        solution: ModeSolution,
        grid: Grid2,
    ) -> GuidedMode {
        let xs: Vec<f64> = (0..grid.nx)
            .map(|i| solution.lateral.value(grid.x(i)))
            .collect();
        let ys: Vec<f64> = (0..grid.ny)
            .map(|j| solution.depth.value(grid.y(j)))
            .collect();
        let mut data = Vec::with_capacity(grid.len());
        for y in &ys {
            data.extend(xs.iter().map(|x| x * y));
        }
        let mut profile = RealGrid { grid, data };
        profile.normalize_power();
        GuidedMode {
            label: solution.label,
            wave,
            lambda_um,
            n_eff: solution.n_eff,
            lateral: solution.lateral,
            depth: solution.depth,
            profile,
        }
    }
}

/// Effective-index solve with sampled profiles, at most `max_modes` modes.
pub fn solve_modes(
    waveguide: &Waveguide,
    wave: Wave,
    lambda_um: f64,
    max_modes: usize,
    grid: Grid2,
) -> Result<Vec<GuidedMode>> {
    let solutions = waveguide.mode_solutions(wave, lambda_um)?;
    Ok(solutions
        .into_iter()
        .take(max_modes)
        .map(|s| waveguide.sample(wave, lambda_um, s, grid))
        .collect())
}

/// Count sign changes of a sampled 1D profile, ignoring samples below
/// `rel_floor` of the peak.
pub fn count_nodes(samples: &[f64], rel_floor: f64) -> usize {
    let peak = samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut last = 0.0f64;
    let mut nodes = 0;
    for &v in samples {
        if v.abs() <= rel_floor * peak {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            nodes += 1;
        }
        last = v;
    }
    nodes
}

/// Node counts of a 2D profile along the lateral line through the depth peak
/// and the depth line through the lateral peak.
pub fn profile_nodes(profile: &RealGrid) -> (usize, usize) {
    let g = profile.grid;
    let (mut bi, mut bj, mut best) = (0, 0, -1.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let v = profile.at(i, j).abs();
            if v > best {
                best = v;
                bi = i;
                bj = j;
            }
        }
    }
    let row: Vec<f64> = (0..g.nx).map(|i| profile.at(i, bj)).collect();
    let col: Vec<f64> = (0..g.ny).map(|j| profile.at(bi, j)).collect();
    (count_nodes(&row, 1e-6), count_nodes(&col, 1e-6))
}

/// Effective index of one mode tabulated over wavelength.
#[derive(Debug, Clone)]
pub struct ModeDispersion {
    pub wave: Wave,
    pub label: ModeLabel,
    curve: Pchip,
}

impl ModeDispersion {
    pub fn from_samples(
        wave: Wave,
        label: ModeLabel,
        lambdas_um: Vec<f64>,
        n_eff: Vec<f64>,
    ) -> Result<Self> {
        Ok(ModeDispersion {
            wave,
            label,
            curve: Pchip::new(lambdas_um, n_eff)?,
        })
    }

    pub fn domain_um(&self) -> (f64, f64) {
        self.curve.domain()
    }

    pub fn samples(&self) -> (&[f64], &[f64]) {
        (self.curve.knots(), self.curve.values())
    }

    fn range_error(&self, lambda_um: f64) -> Error {
        let (min, max) = self.curve.domain();
        Error::Range {
            quantity: "wavelength_um",
            value: lambda_um,
            min,
            max,
        }
    }

    pub fn n_eff(&self, lambda_um: f64) -> Result<f64> {
        self.curve
            .eval(lambda_um)
            .ok_or_else(|| self.range_error(lambda_um))
    }

    /// β(λ) in rad/µm.
    pub fn propagation_constant(&self, lambda_um: f64) -> Result<f64> {
        Ok(propagation_constant(self.n_eff(lambda_um)?, lambda_um))
    }

    /// Modal group index `n_eff − λ·dn_eff/dλ`.
    pub fn group_index(&self, lambda_um: f64) -> Result<f64> {
        let (n, slope) = self
            .curve
            .eval_with_slope(lambda_um)
            .ok_or_else(|| self.range_error(lambda_um))?;
        Ok(n - lambda_um * slope)
    }
}

/// Solve at every wavelength and keep the modes (with both labels at most
/// `max_label`) that are guided across the whole list.
pub fn dispersion_table(
    waveguide: &Waveguide,
    wave: Wave,
    lambdas_um: &[f64],
    max_label: u8,
) -> Result<Vec<ModeDispersion>> {
    let per_lambda: Vec<Vec<(ModeLabel, f64)>> = lambdas_um
        .par_iter()
        .map(|&l| waveguide.mode_indices(wave, l, max_label))
        .collect::<Result<_>>()?;
    let mut labels: Vec<ModeLabel> = per_lambda
        .first()
        .map(|v| v.iter().map(|(l, _)| *l).collect())
        .unwrap_or_default();
    labels.retain(|l| per_lambda.iter().all(|set| set.iter().any(|(m, _)| m == l)));
    labels
        .into_iter()
        .map(|label| {
            let n: Vec<f64> = per_lambda
                .iter()
                .map(|set| set.iter().find(|(m, _)| *m == label).unwrap().1)
                .collect();
            ModeDispersion::from_samples(wave, label, lambdas_um.to_vec(), n)
        })
        .collect()
}

type CacheKey = (u64, Wave, u64, Grid2Key);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Grid2Key([u64; 6]);

impl From<Grid2> for Grid2Key {
    fn from(g: Grid2) -> Self {
        Grid2Key([
            g.nx as u64,
            g.ny as u64,
            g.x0.to_bits(),
            g.dx.to_bits(),
            g.y0.to_bits(),
            g.dy.to_bits(),
        ])
    }
}

/// Solved, sampled modes keyed by (geometry, wave, λ, grid). Readers share the
/// lock; a miss solves outside the lock and inserts under a short write lock.
#[derive(Default)]
pub struct ModeCache {
    inner: RwLock<HashMap<CacheKey, Arc<Vec<GuidedMode>>>>,
}

impl ModeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_solve(
        &self,
        waveguide: &Waveguide,
        wave: Wave,
        lambda_um: f64,
        grid: Grid2,
    ) -> Result<Arc<Vec<GuidedMode>>> {
        let key = (
            waveguide.geometry.fingerprint(),
            wave,
            lambda_um.to_bits(),
            Grid2Key::from(grid),
        );
        if let Some(hit) = self.inner.read().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let modes = Arc::new(solve_modes(waveguide, wave, lambda_um, usize::MAX, grid)?);
        let mut map = self.inner.write().unwrap();
        Ok(Arc::clone(map.entry(key).or_insert(modes)))
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
