//! Joint spectral amplitude of the down-converted pair under a finite-band
//! pump with an arbitrary pump-mode excitation, and what follows from it:
//! island detection, spectral filtering, heralded spatial states and
//! coincidence-counting rates.
//!
//! Spectral grids are uniform in 1/λ; amplitude arrays are stored row-major
//! as `[j·nh + i]` for (λ_H[i], λ_V[j]).

mod counting;
mod islands;

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modesolver::{ModeLabel, Polarization, Wave};
use crate::phasematch::{pm_amplitude, PhaseMatchModel, SpectralGrid, TripletLabels};

pub use counting::{counting_statistics, infer_pair_source, CountingRates, PairSource};
pub use islands::{detect_islands, Island};

/// Transform-limited Gaussian pump spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpEnvelope {
    pub center_nm: f64,
    /// Intensity FWHM in wavelength at the center.
    pub fwhm_nm: f64,
}

impl Default for PumpEnvelope {
    fn default() -> Self {
        PumpEnvelope {
            center_nm: 399.9,
            fwhm_nm: 1.0,
        }
    }
}

impl PumpEnvelope {
    pub fn new(center_nm: f64, fwhm_nm: f64) -> Result<Self> {
        let env = PumpEnvelope { center_nm, fwhm_nm };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_nm > 0.0 && self.fwhm_nm > 0.0 && self.fwhm_nm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pump envelope center {} nm, FWHM {} nm",
                self.center_nm, self.fwhm_nm
            )));
        }
        Ok(())
    }

    /// Intensity FWHM in 1/λ (nm⁻¹), linearized at the center.
    pub fn fwhm_inverse_nm(&self) -> f64 {
        self.fwhm_nm / (self.center_nm * self.center_nm)
    }

    /// Amplitude at the pump frequency set by energy conservation; peak 1,
    /// flat phase.
    pub fn amplitude(&self, lambda_h_nm: f64, lambda_v_nm: f64) -> f64 {
        self.amplitude_at_inverse(1.0 / lambda_h_nm + 1.0 / lambda_v_nm)
    }

    /// Amplitude at pump inverse wavelength `nu` (nm⁻¹).
    pub fn amplitude_at_inverse(&self, nu: f64) -> f64 {
        let x = (nu - 1.0 / self.center_nm) / self.fwhm_inverse_nm();
        (-2.0 * LN_2 * x * x).exp()
    }
}

/// Complex amplitudes of the pump spatial modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpExcitation {
    components: Vec<(ModeLabel, Complex64)>,
}

impl PumpExcitation {
    /// Excitation with Σ|c|² = 1 within 10⁻⁹.
    pub fn new(components: Vec<(ModeLabel, Complex64)>) -> Result<Self> {
        let norm: f64 = components.iter().map(|(_, c)| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "pump excitation norm {norm} differs from 1"
            )));
        }
        Self::unnormalized(components)
    }

    /// Normalizes the given weights.
    pub fn normalized(components: Vec<(ModeLabel, Complex64)>) -> Result<Self> {
        let norm: f64 = components
            .iter()
            .map(|(_, c)| c.norm_sqr())
            .sum::<f64>()
            .sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidInput("pump excitation has zero norm".into()));
        }
        Self::unnormalized(components.into_iter().map(|(l, c)| (l, c / norm)).collect())
    }

    /// No normalization check; for superposition arithmetic.
    pub fn unnormalized(components: Vec<(ModeLabel, Complex64)>) -> Result<Self> {
        let mut seen = Vec::new();
        for (l, c) in &components {
            if seen.contains(l) {
                return Err(Error::InvalidInput(format!("pump mode {l} listed twice")));
            }
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::InvalidInput(format!("pump mode {l} amplitude {c}")));
            }
            seen.push(*l);
        }
        Ok(PumpExcitation { components })
    }

    pub fn fundamental() -> Self {
        PumpExcitation {
            components: vec![(ModeLabel::FUNDAMENTAL, Complex64::new(1.0, 0.0))],
        }
    }

    pub fn components(&self) -> &[(ModeLabel, Complex64)] {
        &self.components
    }
}

/// Amplitude of one down-converted spatial channel (H mode, V mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralChannel {
    pub h: ModeLabel,
    pub v: ModeLabel,
    pub amplitude: Vec<Complex64>,
}

impl SpectralChannel {
    pub fn intensity(&self) -> impl Iterator<Item = f64> + '_ {
        self.amplitude.iter().map(|a| a.norm_sqr())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointSpectrum {
    pub grid: SpectralGrid,
    pub channels: Vec<SpectralChannel>,
}

impl JointSpectrum {
    pub fn channel(&self, h: ModeLabel, v: ModeLabel) -> Option<&SpectralChannel> {
        self.channels.iter().find(|c| c.h == h && c.v == v)
    }

    /// Trapezoid weight of every cell in the 1/λ variables (nm⁻²).
    pub fn cell_weights(&self) -> Vec<f64> {
        let wh = SpectralGrid::inverse_weights(&self.grid.lambda_h_nm);
        let wv = SpectralGrid::inverse_weights(&self.grid.lambda_v_nm);
        wv.iter()
            .flat_map(|a| wh.iter().map(move |b| a * b))
            .collect()
    }

    /// ∬|A_mn|² of every channel.
    pub fn channel_weights(&self) -> Vec<f64> {
        let w = self.cell_weights();
        self.channels
            .iter()
            .map(|c| c.intensity().zip(&w).map(|(i, w)| i * w).sum())
            .collect()
    }

    pub fn total_intensity(&self) -> f64 {
        self.channel_weights().iter().sum()
    }

    /// H and V channels swapped and the grid transposed.
    pub fn swap_arms(&self) -> JointSpectrum {
        let (nh, nv) = (self.grid.nh(), self.grid.nv());
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut a = vec![Complex64::new(0.0, 0.0); c.amplitude.len()];
                for j in 0..nv {
                    for i in 0..nh {
                        a[i * nv + j] = c.amplitude[j * nh + i];
                    }
                }
                SpectralChannel {
                    h: c.v,
                    v: c.h,
                    amplitude: a,
                }
            })
            .collect();
        JointSpectrum {
            grid: SpectralGrid {
                lambda_h_nm: self.grid.lambda_v_nm.clone(),
                lambda_v_nm: self.grid.lambda_h_nm.clone(),
            },
            channels,
        }
    }
}

/// Default grid: 512 × 512 over 780–820 nm in both arms.
pub fn default_grid() -> SpectralGrid {
    SpectralGrid::square(780.0, 820.0, 512).expect("static grid")
}

/// A_mn = Σ_p c_p · Γ_{p,mn} · pump amplitude · sinc(Δβ_{p,mn}L/2) for every
/// (H mode, V mode) pair in the model, coherent over pump modes.
pub fn build_jsa(
    model: &PhaseMatchModel,
    excitation: &PumpExcitation,
    envelope: &PumpEnvelope,
    grid: &SpectralGrid,
) -> Result<JointSpectrum> {
    envelope.validate()?;
    let geometry = model.geometry();
    let length_mm = geometry.length_mm;
    let grating = 2.0 * std::f64::consts::PI / geometry.poling_period_um;
    let h_labels = model.labels(Wave::H);
    let v_labels = model.labels(Wave::V);
    let pump_labels = model.labels(Wave::Pump);
    for (l, _) in excitation.components() {
        if !pump_labels.contains(l) {
            return Err(Error::InvalidInput(format!(
                "pump mode {l} is not among the solved pump modes"
            )));
        }
    }

    let axis_betas = |wave: Wave, labels: &[ModeLabel], axis: &[f64]| -> Result<Vec<Vec<f64>>> {
        labels
            .iter()
            .map(|l| {
                let d = model.dispersion(wave, *l)?;
                axis.iter()
                    .map(|x| d.propagation_constant(x * 1e-3))
                    .collect()
            })
            .collect()
    };
    let beta_h = axis_betas(Wave::H, &h_labels, &grid.lambda_h_nm)?;
    let beta_v = axis_betas(Wave::V, &v_labels, &grid.lambda_v_nm)?;
    let pumps = excitation
        .components()
        .iter()
        .map(|(l, c)| Ok((*c, model.dispersion(Wave::Pump, *l)?, *l)))
        .collect::<Result<Vec<_>>>()?;
    let overlap = |p: ModeLabel, h: ModeLabel, v: ModeLabel| -> Result<f64> {
        Ok(model.triplet(TripletLabels::new(p, h, v))?.overlap)
    };
    // Γ indexed [pump][h][v].
    let gamma = pumps
        .iter()
        .map(|(_, _, p)| {
            h_labels
                .iter()
                .map(|h| v_labels.iter().map(|v| overlap(*p, *h, *v)).collect())
                .collect()
        })
        .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;

    let (nh, nv) = (grid.nh(), grid.nv());
    let (nm, nn) = (h_labels.len(), v_labels.len());
    // One row of cells (fixed λ_V) per task; channel-major within the row.
    let rows: Vec<Vec<Complex64>> = (0..nv)
        .into_par_iter()
        .map(|j| {
            let lv = grid.lambda_v_nm[j];
            let mut row = vec![Complex64::new(0.0, 0.0); nm * nn * nh];
            for i in 0..nh {
                let lh = grid.lambda_h_nm[i];
                let env = envelope.amplitude(lh, lv);
                let lp_um = 1e-3 / (1.0 / lh + 1.0 / lv);
                for (k, (c, disp, _)) in pumps.iter().enumerate() {
                    let bp = disp.propagation_constant(lp_um)?;
                    for m in 0..nm {
                        for n in 0..nn {
                            let db = bp - beta_h[m][i] - beta_v[n][j] - grating;
                            let a = gamma[k][m][n] * env * pm_amplitude(db, length_mm);
                            row[(m * nn + n) * nh + i] += c * a;
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut channels = Vec::with_capacity(nm * nn);
    for (m, h) in h_labels.iter().enumerate() {
        for (n, v) in v_labels.iter().enumerate() {
            let k = m * nn + n;
            let mut amplitude = Vec::with_capacity(nh * nv);
            for row in &rows {
                amplitude.extend_from_slice(&row[k * nh..(k + 1) * nh]);
            }
            channels.push(SpectralChannel {
                h: *h,
                v: *v,
                amplitude,
            });
        }
    }
    Ok(JointSpectrum {
        grid: grid.clone(),
        channels,
    })
}

/// Σ_mn |A_mn|² per cell.
pub fn jsi_map(js: &JointSpectrum) -> Vec<f64> {
    let mut out = vec![0.0; js.grid.len()];
    for c in &js.channels {
        for (o, i) in out.iter_mut().zip(c.intensity()) {
            *o += i;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterShape {
    TopHat,
    Gaussian,
}

impl std::str::FromStr for FilterShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top_hat" | "top-hat" | "tophat" => Ok(FilterShape::TopHat),
            "gaussian" => Ok(FilterShape::Gaussian),
            _ => Err(Error::InvalidInput(format!("unknown filter shape '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralFilter {
    pub arm: Polarization,
    pub shape: FilterShape,
    pub center_nm: f64,
    /// Intensity FWHM; `f64::INFINITY` passes everything.
    pub fwhm_nm: f64,
}

impl SpectralFilter {
    pub fn new(
        arm: Polarization,
        shape: FilterShape,
        center_nm: f64,
        fwhm_nm: f64,
    ) -> Result<Self> {
        let f = SpectralFilter {
            arm,
            shape,
            center_nm,
            fwhm_nm,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_nm > 0.0 && self.center_nm > 0.0 && self.center_nm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "filter center {} nm, FWHM {} nm",
                self.center_nm, self.fwhm_nm
            )));
        }
        Ok(())
    }

    /// Amplitude transmission, the square root of the intensity transmission.
    pub fn amplitude(&self, lambda_nm: f64) -> f64 {
        let d = lambda_nm - self.center_nm;
        match self.shape {
            FilterShape::TopHat => {
                if d.abs() <= 0.5 * self.fwhm_nm {
                    1.0
                } else {
                    0.0
                }
            }
            FilterShape::Gaussian => {
                let x = d / self.fwhm_nm;
                (-2.0 * LN_2 * x * x).exp()
            }
        }
    }
}

/// Every channel multiplied by the filter's amplitude transmission along the
/// filtered arm.
pub fn apply_filter(js: &JointSpectrum, filter: &SpectralFilter) -> Result<JointSpectrum> {
    filter.validate()?;
    let (nh, nv) = (js.grid.nh(), js.grid.nv());
    let t_h: Vec<f64> = match filter.arm {
        Polarization::H => js
            .grid
            .lambda_h_nm
            .iter()
            .map(|l| filter.amplitude(*l))
            .collect(),
        Polarization::V => vec![1.0; nh],
    };
    let t_v: Vec<f64> = match filter.arm {
        Polarization::V => js
            .grid
            .lambda_v_nm
            .iter()
            .map(|l| filter.amplitude(*l))
            .collect(),
        Polarization::H => vec![1.0; nv],
    };
    let channels = js
        .channels
        .iter()
        .map(|c| {
            let mut a = c.amplitude.clone();
            for j in 0..nv {
                for i in 0..nh {
                    a[j * nh + i] *= t_h[i] * t_v[j];
                }
            }
            SpectralChannel {
                h: c.h,
                v: c.v,
                amplitude: a,
            }
        })
        .collect();
    Ok(JointSpectrum {
        grid: js.grid.clone(),
        channels,
    })
}

/// Reduced spatial-mode state of one arm after tracing out the partner's mode
/// and both wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldedState {
    pub arm: Polarization,
    pub labels: Vec<ModeLabel>,
    /// Unit-trace density matrix in the order of `labels`.
    pub rho: DMatrix<Complex64>,
    pub purity: f64,
}

impl HeraldedState {
    pub fn population(&self, label: ModeLabel) -> f64 {
        self.labels
            .iter()
            .position(|l| *l == label)
            .map_or(0.0, |k| self.rho[(k, k)].re)
    }

    /// Label with the largest population and that population.
    pub fn dominant(&self) -> (ModeLabel, f64) {
        let k = (0..self.labels.len())
            .max_by(|&a, &b| self.rho[(a, a)].re.total_cmp(&self.rho[(b, b)].re))
            .expect("non-empty state");
        (self.labels[k], self.rho[(k, k)].re)
    }

    /// Eigenvalues in descending order with unit-norm eigenvectors over
    /// `labels`.
    pub fn eigen(&self) -> Vec<(f64, Vec<Complex64>)> {
        let eig = self.rho.clone().symmetric_eigen();
        let mut out: Vec<(f64, Vec<Complex64>)> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, &l)| (l, eig.eigenvectors.column(k).iter().copied().collect()))
            .collect();
        out.sort_by(|a, b| b.0.total_cmp(&a.0));
        out
    }
}

/// For the H arm, ρ_{mm'} = Σ_n ∬ A_mn·conj(A_m'n) over the trapezoid rule in
/// 1/λ, normalized to unit trace; symmetrically for V.
pub fn heralded_spatial_state(js: &JointSpectrum, arm: Polarization) -> Result<HeraldedState> {
    let key = |c: &SpectralChannel| match arm {
        Polarization::H => (c.h, c.v),
        Polarization::V => (c.v, c.h),
    };
    let mut labels: Vec<ModeLabel> = js.channels.iter().map(|c| key(c).0).collect();
    labels.sort();
    labels.dedup();
    let mut partners: Vec<ModeLabel> = js.channels.iter().map(|c| key(c).1).collect();
    partners.sort();
    partners.dedup();
    let w = js.cell_weights();
    let k = labels.len();
    let mut rho = DMatrix::<Complex64>::zeros(k, k);
    for partner in &partners {
        let row: Vec<Option<&SpectralChannel>> = labels
            .iter()
            .map(|l| js.channels.iter().find(|c| key(c) == (*l, *partner)))
            .collect();
        for a in 0..k {
            let Some(ca) = row[a] else { continue };
            for b in a..k {
                let Some(cb) = row[b] else { continue };
                let s: Complex64 = ca
                    .amplitude
                    .iter()
                    .zip(&cb.amplitude)
                    .zip(&w)
                    .map(|((x, y), w)| x * y.conj() * *w)
                    .sum();
                rho[(a, b)] += s;
                if a != b {
                    rho[(b, a)] += s.conj();
                }
            }
        }
    }
    let trace: f64 = (0..k).map(|a| rho[(a, a)].re).sum();
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(Error::Degenerate(
            "joint spectrum carries no intensity".into(),
        ));
    }
    rho /= Complex64::new(trace, 0.0);
    let purity = rho.iter().map(|z| z.norm_sqr()).sum();
    Ok(HeraldedState {
        arm,
        labels,
        rho,
        purity,
    })
}
