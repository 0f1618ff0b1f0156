//! Quasi-phase-matched type-II down-conversion: mismatch per mode triplet,
//! sinc band amplitudes, band centers and widths, band maps and simulated
//! sum-frequency spectroscopy.
//!
//! Wavelength arguments are vacuum wavelengths in nm; propagation constants
//! are in rad/µm.

mod calibrate;

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::modesolver::{
    dispersion_table, ModeDispersion, ModeLabel, ModeSolution, Wave, Waveguide, WaveguideGeometry,
};
use crate::roots::{bisect, brent};

pub use calibrate::{
    calibrate, evaluate_targets, levenberg_marquardt, model_for, CalibrationParams,
    CalibrationReport, CalibrationTargets, LmOptions, LmOutcome, SeparationKind, Target,
    TargetResidual,
};

/// `x` with `sinc²(x) = ½`.
pub const SINC_HALF_POWER_X: f64 = 1.391_557_378_251_51;

/// Parity threshold below which a triplet's coupling counts as forbidden (µm⁻¹).
pub const FORBIDDEN_OVERLAP: f64 = 1e-6;

/// `1/λ_P = 1/λ_H + 1/λ_V`.
pub fn pump_wavelength(lambda_h_nm: f64, lambda_v_nm: f64) -> Result<f64> {
    if !(lambda_h_nm > 0.0 && lambda_v_nm > 0.0) {
        return Err(Error::InvalidInput(format!(
            "wavelengths must be positive, got ({lambda_h_nm}, {lambda_v_nm}) nm"
        )));
    }
    Ok(1.0 / (1.0 / lambda_h_nm + 1.0 / lambda_v_nm))
}

/// `sin(x)/x`, 1 at the origin.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `sinc(Δβ·L/2)` for Δβ in rad/µm and L in mm.
pub fn pm_amplitude(delta_beta: f64, length_mm: f64) -> f64 {
    sinc(0.5 * delta_beta * length_mm * 1e3)
}

/// Mode labels of one pump → H + V channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletLabels {
    pub pump: ModeLabel,
    pub h: ModeLabel,
    pub v: ModeLabel,
}

impl TripletLabels {
    pub const FUNDAMENTAL: TripletLabels = TripletLabels {
        pump: ModeLabel::FUNDAMENTAL,
        h: ModeLabel::FUNDAMENTAL,
        v: ModeLabel::FUNDAMENTAL,
    };

    pub fn new(pump: ModeLabel, h: ModeLabel, v: ModeLabel) -> Self {
        TripletLabels { pump, h, v }
    }
}

impl fmt::Display for TripletLabels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}P-{}H-{}V", self.pump, self.h, self.v)
    }
}

impl std::str::FromStr for TripletLabels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("triplet '{s}' is not of the form 00P-00H-00V"));
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let label = |part: &str, suffix: char| -> Result<ModeLabel> {
            part.strip_suffix(suffix)
                .ok_or_else(bad)?
                .parse()
                .map_err(|_| bad())
        };
        Ok(TripletLabels::new(
            label(parts[0], 'P')?,
            label(parts[1], 'H')?,
            label(parts[2], 'V')?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeTriplet {
    pub labels: TripletLabels,
    /// Γ = ∬ u_P·u_H·u_V dA in µm⁻¹.
    pub overlap: f64,
}

impl ModeTriplet {
    pub fn is_allowed(&self) -> bool {
        self.overlap.abs() > FORBIDDEN_OVERLAP
    }
}

/// Wavelength sampling of the dispersion tables behind a [`PhaseMatchModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelWindow {
    pub signal_lo_nm: f64,
    pub signal_hi_nm: f64,
    pub signal_step_nm: f64,
    /// Largest node count kept along either axis for the down-converted waves.
    pub max_label: u8,
    /// Same cutoff for the pump.
    pub pump_max_label: u8,
}

impl Default for ModelWindow {
    fn default() -> Self {
        ModelWindow {
            signal_lo_nm: 770.0,
            signal_hi_nm: 830.0,
            signal_step_nm: 1.0,
            max_label: 3,
            pump_max_label: 3,
        }
    }
}

impl ModelWindow {
    pub fn centered(
        center_nm: f64,
        half_width_nm: f64,
        step_nm: f64,
        max_label: u8,
        pump_max_label: u8,
    ) -> Self {
        ModelWindow {
            signal_lo_nm: center_nm - half_width_nm,
            signal_hi_nm: center_nm + half_width_nm,
            signal_step_nm: step_nm,
            max_label,
            pump_max_label,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.signal_lo_nm > 0.0
            && self.signal_hi_nm > self.signal_lo_nm
            && self.signal_step_nm > 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "model window {}–{} nm step {} nm is empty",
                self.signal_lo_nm, self.signal_hi_nm, self.signal_step_nm
            )));
        }
        Ok(())
    }

    fn samples(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).ceil().max(3.0) as usize;
        (0..=n)
            .map(|i| (lo + (hi - lo) * i as f64 / n as f64) * 1e-3)
            .collect()
    }

    fn signal_samples_um(&self) -> Vec<f64> {
        Self::samples(self.signal_lo_nm, self.signal_hi_nm, self.signal_step_nm)
    }

    /// Pump wavelengths reachable from the signal window.
    fn pump_samples_um(&self) -> Vec<f64> {
        Self::samples(
            self.signal_lo_nm / 2.0,
            self.signal_hi_nm / 2.0,
            self.signal_step_nm / 2.0,
        )
    }

    pub fn signal_center_nm(&self) -> f64 {
        0.5 * (self.signal_lo_nm + self.signal_hi_nm)
    }
}

/// Modal dispersion of all three waves plus the coupling weights of every
/// triplet, for one waveguide geometry.
#[derive(Debug, Clone)]
pub struct PhaseMatchModel {
    geometry: WaveguideGeometry,
    window: ModelWindow,
    pump: Vec<ModeDispersion>,
    h: Vec<ModeDispersion>,
    v: Vec<ModeDispersion>,
    triplets: Vec<ModeTriplet>,
}

/// Locus on which band centers are searched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// λ_H = λ_V.
    Degenerate,
    FixedV {
        lambda_v_nm: f64,
    },
    FixedH {
        lambda_h_nm: f64,
    },
}

impl Constraint {
    /// (λ_H, λ_V) at free parameter `t` (nm).
    pub fn point(&self, t: f64) -> (f64, f64) {
        match *self {
            Constraint::Degenerate => (t, t),
            Constraint::FixedV { lambda_v_nm } => (t, lambda_v_nm),
            Constraint::FixedH { lambda_h_nm } => (lambda_h_nm, t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandCenter {
    pub triplet: TripletLabels,
    pub lambda_h_nm: f64,
    pub lambda_v_nm: f64,
    /// Mismatch re-evaluated at the reported point (rad/µm).
    pub delta_beta: f64,
}

/// Summary of one band for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseMatchBand {
    pub triplet: ModeTriplet,
    /// Zero-mismatch samples (λ_H, λ_V) in nm.
    pub centers: Vec<(f64, f64)>,
    /// Width along λ_H at the degenerate λ_V (nm), when the band crosses the
    /// degenerate line inside the window.
    pub fwhm_nm: Option<f64>,
    pub peak_amplitude: f64,
}

/// Wavelength axes uniform in 1/λ, stored in ascending wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub lambda_h_nm: Vec<f64>,
    pub lambda_v_nm: Vec<f64>,
}

impl SpectralGrid {
    pub fn inverse_linear_axis(lo_nm: f64, hi_nm: f64, n: usize) -> Result<Vec<f64>> {
        if !(lo_nm > 0.0 && hi_nm > lo_nm && n >= 2) {
            return Err(Error::InvalidInput(format!(
                "spectral axis {lo_nm}–{hi_nm} nm with {n} points"
            )));
        }
        let (a, b) = (1.0 / lo_nm, 1.0 / hi_nm);
        Ok((0..n)
            .map(|i| 1.0 / (a + (b - a) * i as f64 / (n - 1) as f64))
            .collect())
    }

    pub fn square(lo_nm: f64, hi_nm: f64, n: usize) -> Result<Self> {
        let axis = Self::inverse_linear_axis(lo_nm, hi_nm, n)?;
        Ok(SpectralGrid {
            lambda_h_nm: axis.clone(),
            lambda_v_nm: axis,
        })
    }

    pub fn nh(&self) -> usize {
        self.lambda_h_nm.len()
    }

    pub fn nv(&self) -> usize {
        self.lambda_v_nm.len()
    }

    pub fn len(&self) -> usize {
        self.nh() * self.nv()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trapezoid weights in the 1/λ variable (nm⁻¹) along one axis.
    pub fn inverse_weights(axis: &[f64]) -> Vec<f64> {
        let n = axis.len();
        let mut w = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let d = (1.0 / axis[i] - 1.0 / axis[i + 1]).abs();
            w[i] += 0.5 * d;
            w[i + 1] += 0.5 * d;
        }
        w
    }

    /// Index of the sample nearest to `lambda_nm` on an axis.
    pub fn nearest(axis: &[f64], lambda_nm: f64) -> usize {
        let mut best = 0;
        for (i, l) in axis.iter().enumerate() {
            if (l - lambda_nm).abs() < (axis[best] - lambda_nm).abs() {
                best = i;
            }
        }
        best
    }
}

/// Amplitude Γ·sinc(ΔβL/2) of one triplet on a spectral grid, stored as
/// `amplitude[j·nh + i]` for (λ_H[i], λ_V[j]).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMap {
    pub triplet: ModeTriplet,
    pub amplitude: Vec<f64>,
}

impl PhaseMatchModel {
    pub fn build(waveguide: &Waveguide, window: ModelWindow) -> Result<Self> {
        window.validate()?;
        let signal = window.signal_samples_um();
        let pump_l = window.pump_samples_um();
        let pump = dispersion_table(waveguide, Wave::Pump, &pump_l, window.pump_max_label)?;
        let h = dispersion_table(waveguide, Wave::H, &signal, window.max_label)?;
        let v = dispersion_table(waveguide, Wave::V, &signal, window.max_label)?;
        let center_um = window.signal_center_nm() * 1e-3;
        let grid = waveguide.geometry.mode_grid();
        let reference =
            |wave: Wave, lambda_um: f64, keep: &[ModeDispersion]| -> Result<Vec<ModeSolution>> {
                let cutoff = match wave {
                    Wave::Pump => window.pump_max_label,
                    _ => window.max_label,
                };
                Ok(waveguide
                    .mode_solutions_up_to(wave, lambda_um, cutoff)?
                    .into_iter()
                    .filter(|m| keep.iter().any(|d| d.label == m.label))
                    .collect())
            };
        let ref_p = reference(Wave::Pump, center_um / 2.0, &pump)?;
        let ref_h = reference(Wave::H, center_um, &h)?;
        let ref_v = reference(Wave::V, center_um, &v)?;
        let mut triplets = Vec::new();
        for p in &ref_p {
            for a in &ref_h {
                for b in &ref_v {
                    triplets.push(ModeTriplet {
                        labels: TripletLabels::new(p.label, a.label, b.label),
                        overlap: separable_overlap(p, a, b, grid),
                    });
                }
            }
        }
        Ok(PhaseMatchModel {
            geometry: waveguide.geometry.clone(),
            window,
            pump,
            h,
            v,
            triplets,
        })
    }

    pub fn geometry(&self) -> &WaveguideGeometry {
        &self.geometry
    }

    pub fn window(&self) -> &ModelWindow {
        &self.window
    }

    /// Same modal dispersion under a different poling period.
    pub fn with_period(&self, poling_period_um: f64) -> Result<Self> {
        if !(poling_period_um > 0.0) {
            return Err(Error::InvalidInput(format!(
                "poling period must be > 0, got {poling_period_um}"
            )));
        }
        let mut m = self.clone();
        m.geometry.poling_period_um = poling_period_um;
        Ok(m)
    }

    /// Same model with a different crystal length (the dispersion does not
    /// depend on it).
    pub fn with_length(&self, length_mm: f64) -> Result<Self> {
        if !(length_mm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "length must be > 0, got {length_mm}"
            )));
        }
        let mut m = self.clone();
        m.geometry.length_mm = length_mm;
        Ok(m)
    }

    pub fn dispersion(&self, wave: Wave, label: ModeLabel) -> Result<&ModeDispersion> {
        let set = match wave {
            Wave::Pump => &self.pump,
            Wave::H => &self.h,
            Wave::V => &self.v,
        };
        set.iter().find(|d| d.label == label).ok_or_else(|| {
            Error::InvalidInput(format!(
                "mode {label} of wave {wave} is not guided across the model window"
            ))
        })
    }

    pub fn labels(&self, wave: Wave) -> Vec<ModeLabel> {
        let set = match wave {
            Wave::Pump => &self.pump,
            Wave::H => &self.h,
            Wave::V => &self.v,
        };
        set.iter().map(|d| d.label).collect()
    }

    pub fn triplets(&self) -> &[ModeTriplet] {
        &self.triplets
    }

    pub fn triplet(&self, labels: TripletLabels) -> Result<ModeTriplet> {
        self.triplets
            .iter()
            .find(|t| t.labels == labels)
            .copied()
            .ok_or_else(|| {
                Error::InvalidInput(format!("triplet {labels} is not in the solved mode sets"))
            })
    }

    /// Triplets driven by one pump mode.
    pub fn triplets_for_pump(&self, pump: ModeLabel) -> Vec<ModeTriplet> {
        self.triplets
            .iter()
            .filter(|t| t.labels.pump == pump)
            .copied()
            .collect()
    }

    /// Δβ = β_P(λ_P) − β_H(λ_H) − β_V(λ_V) − 2π/Λ in rad/µm.
    pub fn mismatch(&self, t: TripletLabels, lambda_h_nm: f64, lambda_v_nm: f64) -> Result<f64> {
        Ok(self.unpoled_mismatch(t, lambda_h_nm, lambda_v_nm)?
            - 2.0 * PI / self.geometry.poling_period_um)
    }

    /// Δβ without the grating vector.
    pub fn unpoled_mismatch(
        &self,
        t: TripletLabels,
        lambda_h_nm: f64,
        lambda_v_nm: f64,
    ) -> Result<f64> {
        let lambda_p = pump_wavelength(lambda_h_nm, lambda_v_nm)?;
        let bp = self
            .dispersion(Wave::Pump, t.pump)?
            .propagation_constant(lambda_p * 1e-3)?;
        let bh = self
            .dispersion(Wave::H, t.h)?
            .propagation_constant(lambda_h_nm * 1e-3)?;
        let bv = self
            .dispersion(Wave::V, t.v)?
            .propagation_constant(lambda_v_nm * 1e-3)?;
        Ok(bp - bh - bv)
    }

    /// Γ·sinc(ΔβL/2).
    pub fn amplitude(&self, t: &ModeTriplet, lambda_h_nm: f64, lambda_v_nm: f64) -> Result<f64> {
        let db = self.mismatch(t.labels, lambda_h_nm, lambda_v_nm)?;
        Ok(t.overlap * pm_amplitude(db, self.geometry.length_mm))
    }

    /// All zero-mismatch points of `t` along `constraint` with the free
    /// wavelength in `[lo_nm, hi_nm]`: a scan of `scan_points` samples, then
    /// Brent refinement of every sign change.
    pub fn band_centers(
        &self,
        t: TripletLabels,
        constraint: Constraint,
        lo_nm: f64,
        hi_nm: f64,
        scan_points: usize,
    ) -> Result<Vec<BandCenter>> {
        let n = scan_points.max(2);
        let f = |x: f64| -> Result<f64> {
            let (a, b) = constraint.point(x);
            self.mismatch(t, a, b)
        };
        let xs: Vec<f64> = (0..n)
            .map(|i| lo_nm + (hi_nm - lo_nm) * i as f64 / (n - 1) as f64)
            .collect();
        let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect::<Result<_>>()?;
        let mut out = Vec::new();
        for i in 0..n - 1 {
            if fs[i] == 0.0 || (fs[i + 1] != 0.0 && fs[i].signum() != fs[i + 1].signum()) {
                let root = brent(
                    |x| f(x).unwrap_or(f64::NAN),
                    xs[i],
                    xs[i + 1],
                    fs[i],
                    fs[i + 1],
                    1e-10,
                    1e-10,
                    200,
                )
                .ok_or_else(|| Error::Solver {
                    lambda_um: xs[i] * 1e-3,
                    lo: xs[i],
                    hi: xs[i + 1],
                    detail: format!("band center of {t} lost its bracket"),
                })?;
                let (a, b) = constraint.point(root);
                out.push(BandCenter {
                    triplet: t,
                    lambda_h_nm: a,
                    lambda_v_nm: b,
                    delta_beta: self.mismatch(t, a, b)?,
                });
            }
        }
        if out.is_empty() {
            return Err(Error::NoBracket {
                lo_nm,
                hi_nm,
                f_lo: fs[0],
                f_hi: fs[n - 1],
            });
        }
        Ok(out)
    }

    /// `center ± half` intersected with the modelled signal window.
    fn clamp_to_window(&self, center_nm: f64, half_nm: f64) -> (f64, f64) {
        (
            (center_nm - half_nm).max(self.window.signal_lo_nm),
            (center_nm + half_nm).min(self.window.signal_hi_nm),
        )
    }

    /// Band center nearest to `near_nm` on the degenerate line.
    pub fn degenerate_center(
        &self,
        t: TripletLabels,
        near_nm: f64,
        half_window_nm: f64,
    ) -> Result<BandCenter> {
        let (lo, hi) = self.clamp_to_window(near_nm, half_window_nm);
        let centers = self.band_centers(t, Constraint::Degenerate, lo, hi, 2001)?;
        Ok(centers
            .into_iter()
            .min_by(|a, b| {
                (a.lambda_h_nm - near_nm)
                    .abs()
                    .partial_cmp(&(b.lambda_h_nm - near_nm).abs())
                    .unwrap()
            })
            .unwrap())
    }

    /// Full width at half maximum of |sinc|² along `constraint` through the
    /// band center at free parameter `center_nm`, by bisection on each side.
    pub fn band_fwhm_along(
        &self,
        t: TripletLabels,
        constraint: Constraint,
        center_nm: f64,
    ) -> Result<f64> {
        let length = self.geometry.length_mm;
        let excess = |x: f64| -> Result<f64> {
            let (a, b) = constraint.point(x);
            Ok(pm_amplitude(self.mismatch(t, a, b)?, length).powi(2) - 0.5)
        };
        if excess(center_nm)? <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "{center_nm} nm is not above half maximum of band {t}"
            )));
        }
        let step = 0.02;
        let mut edges = [0.0; 2];
        for (k, dir) in [-1.0f64, 1.0].into_iter().enumerate() {
            let mut inner = center_nm;
            let mut outer = center_nm + dir * step;
            let mut walked = 0;
            while excess(outer)? > 0.0 {
                inner = outer;
                outer += dir * step;
                walked += 1;
                if walked > 5000 {
                    return Err(Error::Solver {
                        lambda_um: center_nm * 1e-3,
                        lo: center_nm,
                        hi: outer,
                        detail: format!("half maximum of band {t} not reached"),
                    });
                }
            }
            edges[k] = bisect(|x| excess(x).unwrap_or(f64::NAN), inner, outer, 80);
        }
        Ok(edges[1] - edges[0])
    }

    /// FWHM along λ_H at fixed λ_V through a band center.
    pub fn band_fwhm(&self, center: &BandCenter) -> Result<f64> {
        self.band_fwhm_along(
            center.triplet,
            Constraint::FixedV {
                lambda_v_nm: center.lambda_v_nm,
            },
            center.lambda_h_nm,
        )
    }

    /// FWHM along the degenerate line through a degenerate band center.
    pub fn band_fwhm_degenerate(&self, center: &BandCenter) -> Result<f64> {
        self.band_fwhm_along(center.triplet, Constraint::Degenerate, center.lambda_h_nm)
    }

    /// Zero-mismatch curve sampled at the given λ_V values (points where the
    /// band does not cross the window are skipped).
    pub fn band_curve(
        &self,
        t: TripletLabels,
        lambda_v_nm: &[f64],
        lo_nm: f64,
        hi_nm: f64,
    ) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &lv in lambda_v_nm {
            if let Ok(cs) =
                self.band_centers(t, Constraint::FixedV { lambda_v_nm: lv }, lo_nm, hi_nm, 201)
            {
                out.extend(cs.iter().map(|c| (c.lambda_h_nm, c.lambda_v_nm)));
            }
        }
        out
    }

    /// Band summary for one triplet near `near_nm` on the degenerate line.
    pub fn band_summary(
        &self,
        t: &ModeTriplet,
        near_nm: f64,
        half_window_nm: f64,
    ) -> Result<PhaseMatchBand> {
        let lo = near_nm - half_window_nm;
        let hi = near_nm + half_window_nm;
        let lv: Vec<f64> = (0..=20).map(|i| lo + (hi - lo) * i as f64 / 20.0).collect();
        let centers = self.band_curve(t.labels, &lv, lo, hi);
        let fwhm_nm = match self.degenerate_center(t.labels, near_nm, half_window_nm) {
            Ok(c) if t.is_allowed() => Some(self.band_fwhm(&c)?),
            _ => None,
        };
        Ok(PhaseMatchBand {
            triplet: *t,
            centers,
            fwhm_nm,
            peak_amplitude: t.overlap,
        })
    }

    /// Distance on the degenerate line from `reference_nm` to the nearest
    /// allowed band of `pump` other than the fundamental H/V pair, searched
    /// within `half_window_nm`. `None` when no such band lies in the window.
    pub fn nearest_band_separation(
        &self,
        pump: ModeLabel,
        reference_nm: f64,
        half_window_nm: f64,
    ) -> Result<Option<(TripletLabels, f64)>> {
        let (lo, hi) = self.clamp_to_window(reference_nm, half_window_nm);
        let mut best: Option<(TripletLabels, f64)> = None;
        for t in self.triplets_for_pump(pump) {
            if !t.is_allowed() || (t.labels.h.is_fundamental() && t.labels.v.is_fundamental()) {
                continue;
            }
            let centers = match self.band_centers(t.labels, Constraint::Degenerate, lo, hi, 401) {
                Ok(c) => c,
                Err(Error::NoBracket { .. }) => continue,
                Err(e) => return Err(e),
            };
            for c in centers {
                let d = (c.lambda_h_nm - reference_nm).abs();
                if best.is_none_or(|(_, b)| d < b) {
                    best = Some((t.labels, d));
                }
            }
        }
        Ok(best)
    }

    /// Γ·sinc(ΔβL/2) of each triplet on a spectral grid.
    pub fn map_bands(&self, triplets: &[ModeTriplet], grid: &SpectralGrid) -> Result<Vec<BandMap>> {
        triplets
            .iter()
            .map(|t| {
                let rows: Vec<Vec<f64>> = grid
                    .lambda_v_nm
                    .par_iter()
                    .map(|&lv| {
                        grid.lambda_h_nm
                            .iter()
                            .map(|&lh| self.amplitude(t, lh, lv))
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<_>>()?;
                Ok(BandMap {
                    triplet: *t,
                    amplitude: rows.concat(),
                })
            })
            .collect()
    }

    /// Relative SFG power at input wavelengths (λ_1 on the H arm, λ_2 on the V
    /// arm): |Γ·sinc|² convolved with unit-area Gaussian filter transmissions
    /// of the given FWHM in both arms. A zero FWHM disables the convolution.
    pub fn sfg_response(
        &self,
        lambda_1_nm: f64,
        lambda_2_nm: f64,
        t: &ModeTriplet,
        filter_fwhm_nm: f64,
    ) -> Result<f64> {
        if !(filter_fwhm_nm >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "filter FWHM must be ≥ 0, got {filter_fwhm_nm}"
            )));
        }
        let power = |a: f64, b: f64| -> Result<f64> { Ok(self.amplitude(t, a, b)?.powi(2)) };
        if filter_fwhm_nm == 0.0 {
            return power(lambda_1_nm, lambda_2_nm);
        }
        let sigma = filter_fwhm_nm / (8.0 * 2f64.ln()).sqrt();
        let (nodes, weights) = gaussian_kernel(sigma, SFG_KERNEL_POINTS);
        let mut total = 0.0;
        for (da, wa) in nodes.iter().zip(&weights) {
            for (db, wb) in nodes.iter().zip(&weights) {
                total += wa * wb * power(lambda_1_nm + da, lambda_2_nm + db)?;
            }
        }
        Ok(total)
    }

    /// SFG response map on arbitrary axes, rows along λ_2.
    pub fn sfg_map(
        &self,
        t: &ModeTriplet,
        lambda_1_nm: &[f64],
        lambda_2_nm: &[f64],
        filter_fwhm_nm: f64,
    ) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = lambda_2_nm
            .par_iter()
            .map(|&b| {
                lambda_1_nm
                    .iter()
                    .map(|&a| self.sfg_response(a, b, t, filter_fwhm_nm))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        Ok(rows.concat())
    }
}

const SFG_KERNEL_POINTS: usize = 41;

/// Trapezoid nodes over ±4σ with weights of a unit-area Gaussian.
fn gaussian_kernel(sigma: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let half = 4.0 * sigma;
    let nodes: Vec<f64> = (0..n)
        .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
        .collect();
    let raw: Vec<f64> = nodes
        .iter()
        .map(|x| (-0.5 * (x / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    (nodes, raw.into_iter().map(|w| w / sum).collect())
}

/// Γ of three effective-index modes on the tensor grid `grid`: the 2D
/// trapezoid rule factorizes into a lateral and a depth sum, each profile
/// normalized on the same rule.
pub fn separable_overlap(p: &ModeSolution, h: &ModeSolution, v: &ModeSolution, grid: Grid2) -> f64 {
    let line = |n: usize, x0: f64, dx: f64, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let mut s: Vec<f64> = (0..n).map(|i| f(x0 + dx * i as f64)).collect();
        let norm: f64 = trapezoid(&s.iter().map(|v| v * v).collect::<Vec<_>>(), dx).sqrt();
        s.iter_mut().for_each(|v| *v /= norm);
        s
    };
    let lateral: Vec<Vec<f64>> = [p, h, v]
        .iter()
        .map(|m| line(grid.nx, grid.x0, grid.dx, &|x| m.lateral.value(x)))
        .collect();
    let depth: Vec<Vec<f64>> = [p, h, v]
        .iter()
        .map(|m| line(grid.ny, grid.y0, grid.dy, &|y| m.depth.value(y)))
        .collect();
    let triple = |s: &[Vec<f64>], d: f64| {
        let prod: Vec<f64> = (0..s[0].len())
            .map(|i| s[0][i] * s[1][i] * s[2][i])
            .collect();
        trapezoid(&prod, d)
    };
    triple(&lateral, grid.dx) * triple(&depth, grid.dy)
}

fn trapezoid(v: &[f64], d: f64) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    (v.iter().sum::<f64>() - 0.5 * (v[0] + v[n - 1])) * d
}
