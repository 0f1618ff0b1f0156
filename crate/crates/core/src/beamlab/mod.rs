//! Free-space propagation of output-facet fields and a simulated
//! photon-counting knife-edge M² bench.
//!
//! Transverse coordinates are in µm, propagation distances in mm and vacuum
//! wavelengths in nm. Fields are sampled on centered uniform grids,
//! `x_i = (i − (n−1)/2)·dx`, stored row-major as `[j·nx + i]`.

mod caustic;
mod knife;

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsa::HeraldedState;
use crate::modesolver::{ModeLabel, ModeSolution, Wave, Waveguide};

pub use caustic::{
    caustic_from_planes, caustic_planes, fit_m2, fit_m2_axis, iso_planes, iso_sampling_plan,
    mixture_caustic, AxisFit, CausticPlane, CausticRecord, CausticScan, M2Fit, NoiseModel,
    KNIFE_POSITIONS, KNIFE_SPAN_SIGMAS,
};
pub use knife::{
    knife_edge_positions, knife_edge_scan, knife_edge_scan_marginal, width_from_knife_edge,
    KnifeEdgeCurve, KnifeEdgeOptions, KnifeEdgeWidth, PedestalMode,
};

/// Transverse direction of a marginal, scan or fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamAxis {
    /// Horizontal, along the waveguide width.
    X,
    /// Vertical, along the diffusion depth.
    Y,
}

impl fmt::Display for BeamAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BeamAxis::X => "x",
            BeamAxis::Y => "y",
        })
    }
}

impl std::str::FromStr for BeamAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "horizontal" | "lateral" => Ok(BeamAxis::X),
            "y" | "vertical" | "depth" => Ok(BeamAxis::Y),
            _ => Err(Error::InvalidInput(format!("unknown axis '{s}'"))),
        }
    }
}

/// Sampling of a transverse plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx_um: f64,
    pub dy_um: f64,
}

impl FieldGrid {
    pub fn square(n: usize, pitch_um: f64) -> Self {
        FieldGrid {
            nx: n,
            ny: n,
            dx_um: pitch_um,
            dy_um: pitch_um,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 || !(self.dx_um > 0.0 && self.dy_um > 0.0) {
            return Err(Error::InvalidInput(format!("field grid {self:?}")));
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.nx - 1) as f64) * self.dx_um
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.ny - 1) as f64) * self.dy_um
    }

    pub fn coords(&self, axis: BeamAxis) -> Vec<f64> {
        match axis {
            BeamAxis::X => (0..self.nx).map(|i| self.x(i)).collect(),
            BeamAxis::Y => (0..self.ny).map(|j| self.y(j)).collect(),
        }
    }

    pub fn pitch(&self, axis: BeamAxis) -> f64 {
        match axis {
            BeamAxis::X => self.dx_um,
            BeamAxis::Y => self.dy_um,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell_area(&self) -> f64 {
        self.dx_um * self.dy_um
    }
}

/// Complex scalar field in one transverse plane, ∬|E|² dA = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseField {
    pub grid: FieldGrid,
    pub data: Vec<Complex64>,
    pub z_mm: f64,
    pub lambda_nm: f64,
}

/// Fraction of the window width on each side treated as guard band.
const GUARD_FRACTION: f64 = 0.125;
/// Largest tolerated power fraction in the guard band.
const GUARD_TOLERANCE: f64 = 1e-4;

impl TransverseField {
    /// Samples `f(x, y)` and normalizes it.
    pub fn from_fn(
        grid: FieldGrid,
        lambda_nm: f64,
        z_mm: f64,
        f: impl Fn(f64, f64) -> Complex64,
    ) -> Result<Self> {
        grid.validate()?;
        if !(lambda_nm > 0.0) {
            return Err(Error::InvalidInput(format!("wavelength {lambda_nm} nm")));
        }
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                data.push(f(grid.x(i), y));
            }
        }
        let mut field = TransverseField {
            grid,
            data,
            z_mm,
            lambda_nm,
        };
        field.normalize()?;
        Ok(field)
    }

    pub fn power(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let p = self.power();
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Degenerate("field carries no power".into()));
        }
        let s = 1.0 / p.sqrt();
        for a in &mut self.data {
            *a *= s;
        }
        Ok(())
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|a| a.norm_sqr()).collect()
    }

    /// ⟨self|other⟩ = ∬ conj(E₁)·E₂ dA.
    pub fn inner(&self, other: &TransverseField) -> Result<Complex64> {
        if self.grid != other.grid {
            return Err(Error::Shape("fields on different grids".into()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.cell_area())
    }

    /// Intensity integrated over the other axis, per µm.
    pub fn marginal(&self, axis: BeamAxis) -> Vec<f64> {
        marginal(&self.grid, &self.intensity(), axis)
    }

    /// Fraction of the power in the guard band along either axis.
    pub fn guard_fraction(&self) -> f64 {
        let g = &self.grid;
        let bx = ((g.nx as f64 * GUARD_FRACTION).ceil() as usize).max(1);
        let by = ((g.ny as f64 * GUARD_FRACTION).ceil() as usize).max(1);
        let mut edge = 0.0;
        let mut total = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let p = self.data[j * g.nx + i].norm_sqr();
                total += p;
                if i < bx || i >= g.nx - bx || j < by || j >= g.ny - by {
                    edge += p;
                }
            }
        }
        if total > 0.0 {
            edge / total
        } else {
            0.0
        }
    }

    fn check_guard(&self) -> Result<()> {
        let fraction = self.guard_fraction();
        if fraction > GUARD_TOLERANCE {
            let (wx, wy) = second_moment_widths(self)?;
            let need_x = 2.0 * 2.5 * wx / (1.0 - 2.0 * GUARD_FRACTION);
            let need_y = 2.0 * 2.5 * wy / (1.0 - 2.0 * GUARD_FRACTION);
            let have_x = self.grid.nx as f64 * self.grid.dx_um;
            let have_y = self.grid.ny as f64 * self.grid.dy_um;
            return Err(Error::Guard {
                fraction,
                suggested_factor: (need_x / have_x).max(need_y / have_y).max(1.5),
            });
        }
        Ok(())
    }

    /// Fraction of the power in the outer eighth of the spatial-frequency
    /// band on either axis.
    pub fn spectral_edge_fraction(&self) -> f64 {
        spectral_edge(
            &self.grid,
            &fft2(&self.data, self.grid.nx, self.grid.ny, false),
        )
    }

    fn check_nyquist(&self) -> Result<()> {
        let f = self.spectral_edge_fraction();
        if f > GUARD_TOLERANCE {
            return Err(Error::Nyquist(format!(
                "{f:.2e} of the angular spectrum lies in the outer band; reduce the pitch"
            )));
        }
        Ok(())
    }
}

fn spectral_edge(g: &FieldGrid, spec: &[Complex64]) -> f64 {
    let (mut edge, mut total) = (0.0, 0.0);
    for j in 0..g.ny {
        let fj = freq_index(j, g.ny).unsigned_abs() as f64 / (0.5 * g.ny as f64);
        for i in 0..g.nx {
            let fi = freq_index(i, g.nx).unsigned_abs() as f64 / (0.5 * g.nx as f64);
            let p = spec[j * g.nx + i].norm_sqr();
            total += p;
            if fi > 1.0 - GUARD_FRACTION || fj > 1.0 - GUARD_FRACTION {
                edge += p;
            }
        }
    }
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}

/// Marginal of a row-major intensity array.
pub fn marginal(grid: &FieldGrid, intensity: &[f64], axis: BeamAxis) -> Vec<f64> {
    match axis {
        BeamAxis::X => (0..grid.nx)
            .map(|i| {
                (0..grid.ny)
                    .map(|j| intensity[j * grid.nx + i])
                    .sum::<f64>()
                    * grid.dy_um
            })
            .collect(),
        BeamAxis::Y => (0..grid.ny)
            .map(|j| {
                intensity[j * grid.nx..(j + 1) * grid.nx]
                    .iter()
                    .sum::<f64>()
                    * grid.dx_um
            })
            .collect(),
    }
}

fn freq_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    const B: usize = 32;
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

fn fft2(data: &[Complex64], nx: usize, ny: usize, inverse: bool) -> Vec<Complex64> {
    let mut planner = FftPlanner::<f64>::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    let mut buf = data.to_vec();
    fx.process(&mut buf);
    let mut cols = transpose(&buf, ny, nx);
    fy.process(&mut cols);
    let mut buf = transpose(&cols, nx, ny);
    if inverse {
        let s = 1.0 / (nx * ny) as f64;
        for a in &mut buf {
            *a *= s;
        }
    }
    buf
}

/// Angular spectrum of a field, for propagating it to many planes with one
/// inverse transform each.
#[derive(Debug, Clone)]
pub struct AngularSpectrum {
    grid: FieldGrid,
    spectrum: Vec<Complex64>,
    /// kz − k per frequency sample, µm⁻¹.
    kz_minus_k: Vec<f64>,
    z_mm: f64,
    lambda_nm: f64,
}

impl AngularSpectrum {
    /// Refuses fields whose spectrum reaches the outer band or evanescent
    /// frequencies.
    pub fn new(field: &TransverseField) -> Result<Self> {
        let g = field.grid;
        let k = 2.0 * PI / (field.lambda_nm * 1e-3);
        let mut kz_minus_k = Vec::with_capacity(g.len());
        for j in 0..g.ny {
            let ky = 2.0 * PI * freq_index(j, g.ny) as f64 / (g.ny as f64 * g.dy_um);
            for i in 0..g.nx {
                let kx = 2.0 * PI * freq_index(i, g.nx) as f64 / (g.nx as f64 * g.dx_um);
                let kt2 = kx * kx + ky * ky;
                if kt2 >= k * k {
                    return Err(Error::Nyquist(
                        "grid resolves evanescent spatial frequencies; increase the pitch".into(),
                    ));
                }
                kz_minus_k.push(-kt2 / (k + (k * k - kt2).sqrt()));
            }
        }
        let spectrum = fft2(&field.data, g.nx, g.ny, false);
        let f = spectral_edge(&g, &spectrum);
        if f > GUARD_TOLERANCE {
            return Err(Error::Nyquist(format!(
                "{f:.2e} of the angular spectrum lies in the outer band; reduce the pitch"
            )));
        }
        Ok(AngularSpectrum {
            grid: g,
            spectrum,
            kz_minus_k,
            z_mm: field.z_mm,
            lambda_nm: field.lambda_nm,
        })
    }

    /// The field `dz_mm` downstream; the common phase k·Δz is dropped.
    pub fn field_at(&self, dz_mm: f64) -> Result<TransverseField> {
        let g = self.grid;
        let dz = dz_mm * 1e3;
        let spec: Vec<Complex64> = self
            .spectrum
            .iter()
            .zip(&self.kz_minus_k)
            .map(|(a, q)| a * Complex64::from_polar(1.0, q * dz))
            .collect();
        let out = TransverseField {
            grid: g,
            data: fft2(&spec, g.nx, g.ny, true),
            z_mm: self.z_mm + dz_mm,
            lambda_nm: self.lambda_nm,
        };
        out.check_guard()?;
        Ok(out)
    }
}

/// Angular-spectrum propagation over `dz_mm`. Evanescent components are
/// refused by the Nyquist guard rather than silently dropped.
pub fn propagate(field: &TransverseField, dz_mm: f64) -> Result<TransverseField> {
    if dz_mm == 0.0 {
        return Ok(field.clone());
    }
    AngularSpectrum::new(field)?.field_at(dz_mm)
}

/// Ideal thin lens of focal length `f_mm`; `f64::INFINITY` is the identity.
pub fn thin_lens(field: &TransverseField, f_mm: f64) -> Result<TransverseField> {
    if f_mm == 0.0 || f_mm.is_nan() {
        return Err(Error::InvalidInput(format!("focal length {f_mm} mm")));
    }
    if f_mm.is_infinite() {
        return Ok(field.clone());
    }
    let g = field.grid;
    let lambda = field.lambda_nm * 1e-3;
    let f = f_mm * 1e3;
    // Phase step per pixel at the window edge must stay below π.
    let x_max = 0.5 * (g.nx - 1) as f64 * g.dx_um;
    let y_max = 0.5 * (g.ny - 1) as f64 * g.dy_um;
    let step = (2.0 * PI * x_max * g.dx_um / (lambda * f.abs()))
        .max(2.0 * PI * y_max * g.dy_um / (lambda * f.abs()));
    if step >= PI {
        return Err(Error::Nyquist(format!(
            "lens phase changes by {step:.2} rad per pixel at the window edge"
        )));
    }
    let mut out = field.clone();
    for j in 0..g.ny {
        let y = g.y(j);
        for i in 0..g.nx {
            let x = g.x(i);
            let phi = -PI * (x * x + y * y) / (lambda * f);
            out.data[j * g.nx + i] *= Complex64::from_polar(1.0, phi);
        }
    }
    Ok(out)
}

/// Physicists' Hermite polynomial H_n(t).
pub fn hermite(n: usize, t: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * t);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = 2.0 * t * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Hermite-Gauss mode HG(n, m) of waist `w0_um` at its waist plane.
pub fn hg_field(
    n: usize,
    m: usize,
    w0_um: f64,
    lambda_nm: f64,
    grid: FieldGrid,
) -> Result<TransverseField> {
    if !(w0_um > 0.0) {
        return Err(Error::InvalidInput(format!("waist {w0_um} µm")));
    }
    let s = 2f64.sqrt() / w0_um;
    let field = TransverseField::from_fn(grid, lambda_nm, 0.0, |x, y| {
        let r = hermite(n, s * x) * hermite(m, s * y) * (-(x * x + y * y) / (w0_um * w0_um)).exp();
        Complex64::new(r, 0.0)
    })?;
    field.check_nyquist()?;
    Ok(field)
}

/// Intensity-weighted centroid and w = 2σ of a 1D marginal on a uniform
/// axis.
pub fn second_moment_width(coords: &[f64], marginal: &[f64]) -> Result<(f64, f64)> {
    if coords.len() != marginal.len() || coords.is_empty() {
        return Err(Error::Shape(
            "coordinates and marginal differ in length".into(),
        ));
    }
    if marginal.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("intensity must be non-negative".into()));
    }
    let total: f64 = marginal.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("zero total intensity".into()));
    }
    let mean = coords.iter().zip(marginal).map(|(x, p)| x * p).sum::<f64>() / total;
    let var = coords
        .iter()
        .zip(marginal)
        .map(|(x, p)| (x - mean).powi(2) * p)
        .sum::<f64>()
        / total;
    Ok((mean, 2.0 * var.sqrt()))
}

/// (w_x, w_y) of a field.
pub fn second_moment_widths(field: &TransverseField) -> Result<(f64, f64)> {
    let wx = second_moment_width(
        &field.grid.coords(BeamAxis::X),
        &field.marginal(BeamAxis::X),
    )?
    .1;
    let wy = second_moment_width(
        &field.grid.coords(BeamAxis::Y),
        &field.marginal(BeamAxis::Y),
    )?
    .1;
    Ok((wx, wy))
}

/// Incoherent mixture of fields with non-negative weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBeam {
    components: Vec<(TransverseField, f64)>,
}

impl MixedBeam {
    pub fn new(components: Vec<(TransverseField, f64)>) -> Result<Self> {
        let Some((first, _)) = components.first() else {
            return Err(Error::InvalidInput("empty beam mixture".into()));
        };
        let sum: f64 = components.iter().map(|(_, w)| w).sum();
        if components.iter().any(|(_, w)| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "mixture weights must be ≥ 0 and sum to 1 (sum {sum})"
            )));
        }
        for (f, _) in &components {
            if f.grid != first.grid || f.lambda_nm != first.lambda_nm || f.z_mm != first.z_mm {
                return Err(Error::Shape(
                    "mixture components differ in grid or plane".into(),
                ));
            }
        }
        Ok(MixedBeam { components })
    }

    /// Weights rescaled to sum to 1.
    pub fn normalized(components: Vec<(TransverseField, f64)>) -> Result<Self> {
        let sum: f64 = components.iter().map(|(_, w)| w).sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidInput("mixture weights sum to zero".into()));
        }
        Self::new(components.into_iter().map(|(f, w)| (f, w / sum)).collect())
    }

    pub fn single(field: TransverseField) -> Self {
        MixedBeam {
            components: vec![(field, 1.0)],
        }
    }

    pub fn components(&self) -> &[(TransverseField, f64)] {
        &self.components
    }

    pub fn grid(&self) -> FieldGrid {
        self.components[0].0.grid
    }

    pub fn z_mm(&self) -> f64 {
        self.components[0].0.z_mm
    }

    pub fn lambda_nm(&self) -> f64 {
        self.components[0].0.lambda_nm
    }

    pub fn intensity(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid().len()];
        for (f, w) in &self.components {
            for (o, a) in out.iter_mut().zip(&f.data) {
                *o += w * a.norm_sqr();
            }
        }
        out
    }

    pub fn marginal(&self, axis: BeamAxis) -> Vec<f64> {
        marginal(&self.grid(), &self.intensity(), axis)
    }

    pub fn width(&self, axis: BeamAxis) -> Result<f64> {
        Ok(second_moment_width(&self.grid().coords(axis), &self.marginal(axis))?.1)
    }

    pub fn propagate(&self, dz_mm: f64) -> Result<MixedBeam> {
        Ok(MixedBeam {
            components: self
                .components
                .iter()
                .map(|(f, w)| Ok((propagate(f, dz_mm)?, *w)))
                .collect::<Result<_>>()?,
        })
    }

    /// Angular spectra of the components, in order.
    pub fn spectra(&self) -> Result<Vec<AngularSpectrum>> {
        self.components
            .iter()
            .map(|(f, _)| AngularSpectrum::new(f))
            .collect()
    }

    /// The beam `dz_mm` downstream from precomputed [`MixedBeam::spectra`].
    pub fn propagate_spectra(&self, spectra: &[AngularSpectrum], dz_mm: f64) -> Result<MixedBeam> {
        Ok(MixedBeam {
            components: spectra
                .iter()
                .zip(&self.components)
                .map(|(s, (_, w))| Ok((s.field_at(dz_mm)?, *w)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn thin_lens(&self, f_mm: f64) -> Result<MixedBeam> {
        Ok(MixedBeam {
            components: self
                .components
                .iter()
                .map(|(f, w)| Ok((thin_lens(f, f_mm)?, *w)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Imaging of the facet onto the measurement rail with independent
/// magnifications along x and y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relay {
    pub magnification_x: f64,
    pub magnification_y: f64,
    /// Facet point imaged onto the optical axis, µm.
    pub center_x_um: f64,
    pub center_y_um: f64,
}

impl Relay {
    pub const IDENTITY: Relay = Relay {
        magnification_x: 1.0,
        magnification_y: 1.0,
        center_x_um: 0.0,
        center_y_um: 0.0,
    };

    /// Magnifications that image `reference` to a beam of half-width
    /// `waist_um` on both axes, centered on its intensity centroid.
    pub fn fitted(reference: &ModeSolution, waist_um: f64) -> Result<Relay> {
        if !(waist_um > 0.0) {
            return Err(Error::InvalidInput(format!("relay waist {waist_um} µm")));
        }
        let profile = |f: &dyn Fn(f64) -> f64, (lo, hi): (f64, f64)| -> Result<(f64, f64)> {
            let n = 4001;
            let xs: Vec<f64> = (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect();
            let p: Vec<f64> = xs.iter().map(|x| f(*x).powi(2)).collect();
            second_moment_width(&xs, &p)
        };
        let (cx, wx) = profile(&|x| reference.lateral.value(x), reference.lateral.support())?;
        let (cy, wy) = profile(&|y| reference.depth.value(y), reference.depth.support())?;
        Ok(Relay {
            magnification_x: waist_um / wx,
            magnification_y: waist_um / wy,
            center_x_um: cx,
            center_y_um: cy,
        })
    }
}

/// Guided mode imaged through `relay` onto `grid` at z = 0; unit norm. The
/// mode's node counts are checked on the new grid.
pub fn facet_field(
    mode: &ModeSolution,
    lambda_nm: f64,
    relay: &Relay,
    grid: FieldGrid,
) -> Result<TransverseField> {
    let (mx, my) = (relay.magnification_x, relay.magnification_y);
    if !(mx > 0.0 && my > 0.0) {
        return Err(Error::InvalidInput(format!(
            "relay magnification {mx} × {my}"
        )));
    }
    let field = TransverseField::from_fn(grid, lambda_nm, 0.0, |x, y| {
        let v = mode.lateral.value(relay.center_x_um + x / mx)
            * mode.depth.value(relay.center_y_um + y / my);
        Complex64::new(v, 0.0)
    })?;
    let (wx, wy) = second_moment_widths(&field)?;
    if wx < 4.0 * grid.dx_um || wy < 4.0 * grid.dy_um {
        return Err(Error::Nyquist(format!(
            "mode {} spans {wx:.2} × {wy:.2} µm on a {} × {} µm pitch",
            mode.label, grid.dx_um, grid.dy_um
        )));
    }
    let (nx, ny) = field_nodes(&field);
    if (nx, ny) != (mode.label.i as usize, mode.label.j as usize) {
        return Err(Error::Nyquist(format!(
            "mode {} resampled with {nx}{ny} nodes",
            mode.label
        )));
    }
    field.check_nyquist()?;
    Ok(field)
}

/// Node counts of a real-valued field along the lines through its peak.
pub fn field_nodes(field: &TransverseField) -> (usize, usize) {
    let g = field.grid;
    let k = (0..field.data.len())
        .max_by(|&a, &b| field.data[a].norm().total_cmp(&field.data[b].norm()))
        .unwrap_or(0);
    let (bi, bj) = (k % g.nx, k / g.nx);
    let row: Vec<f64> = (0..g.nx).map(|i| field.data[bj * g.nx + i].re).collect();
    let col: Vec<f64> = (0..g.ny).map(|j| field.data[j * g.nx + bi].re).collect();
    (
        crate::modesolver::count_nodes(&row, 1e-6),
        crate::modesolver::count_nodes(&col, 1e-6),
    )
}

/// The heralded photon's spatial state imaged onto the rail: each
/// eigenvector of ρ becomes one coherent superposition of facet fields,
/// weighted by its eigenvalue.
pub fn heralded_beam(
    waveguide: &Waveguide,
    state: &HeraldedState,
    lambda_nm: f64,
    relay: &Relay,
    grid: FieldGrid,
) -> Result<MixedBeam> {
    let wave = match state.arm {
        crate::modesolver::Polarization::H => Wave::H,
        crate::modesolver::Polarization::V => Wave::V,
    };
    let max_label = state.labels.iter().map(|l| l.i.max(l.j)).max().unwrap_or(0);
    let solutions = waveguide.mode_solutions_up_to(wave, lambda_nm * 1e-3, max_label)?;
    let fields = state
        .labels
        .iter()
        .map(|l| {
            let s = solutions.iter().find(|s| s.label == *l).ok_or_else(|| {
                Error::InvalidInput(format!("mode {l} is not guided at {lambda_nm} nm"))
            })?;
            facet_field(s, lambda_nm, relay, grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut components = Vec::new();
    for (weight, vector) in state.eigen() {
        if weight <= 1e-12 {
            continue;
        }
        let mut data = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (f, c) in fields.iter().zip(&vector) {
            for (d, a) in data.iter_mut().zip(&f.data) {
                *d += c * a;
            }
        }
        let mut field = TransverseField {
            grid,
            data,
            z_mm: 0.0,
            lambda_nm,
        };
        field.normalize()?;
        components.push((field, weight));
    }
    MixedBeam::normalized(components)
}

/// The facet field of one guided mode as a single-component beam.
pub fn mode_beam(
    waveguide: &Waveguide,
    wave: Wave,
    label: ModeLabel,
    lambda_nm: f64,
    relay: &Relay,
    grid: FieldGrid,
) -> Result<MixedBeam> {
    let solutions = waveguide.mode_solutions_up_to(wave, lambda_nm * 1e-3, label.i.max(label.j))?;
    let s = solutions.iter().find(|s| s.label == label).ok_or_else(|| {
        Error::InvalidInput(format!("mode {label} is not guided at {lambda_nm} nm"))
    })?;
    Ok(MixedBeam::single(facet_field(s, lambda_nm, relay, grid)?))
}
