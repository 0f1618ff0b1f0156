use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::knife::{
    knife_edge_positions, knife_edge_scan_marginal, width_from_knife_edge, KnifeEdgeOptions,
};
use super::{second_moment_width, BeamAxis, MixedBeam};
use crate::error::{Error, Result};

/// Knife positions per curve and their span in σ of the noiseless marginal.
pub const KNIFE_POSITIONS: usize = 41;
pub const KNIFE_SPAN_SIGMAS: f64 = 5.25;

/// Inside points uniformly within z0 ± z_R (strictly inside), outside points
/// alternating sides at 2.5, 3.0, 3.5, … z_R.
pub fn iso_sampling_plan(
    z0_mm: f64,
    z_r_mm: f64,
    inside: usize,
    outside: usize,
) -> Result<Vec<f64>> {
    if !(z_r_mm > 0.0 && z_r_mm.is_finite()) {
        return Err(Error::Plan(format!("Rayleigh range {z_r_mm} mm")));
    }
    if inside < 5 || outside < 5 {
        return Err(Error::Plan(format!(
            "{inside} points inside z_R and {outside} beyond 2 z_R; at least 5 of each are required"
        )));
    }
    let mut z: Vec<f64> = (0..inside)
        .map(|k| z0_mm + z_r_mm * (2.0 * k as f64 + 1.0 - inside as f64) / inside as f64)
        .collect();
    for k in 0..outside {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        z.push(z0_mm + sign * (2.5 + 0.5 * (k / 2) as f64) * z_r_mm);
    }
    z.sort_by(f64::total_cmp);
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausticRecord {
    pub z_mm: f64,
    pub axis: BeamAxis,
    pub w_um: f64,
    pub sigma_w_um: f64,
    /// Total counts behind the curve; zero for exact moments.
    pub counts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausticScan {
    pub lambda_nm: f64,
    pub plan_mm: Vec<f64>,
    pub seed: Option<u64>,
    pub records: Vec<CausticRecord>,
}

impl CausticScan {
    pub fn axis_records(&self, axis: BeamAxis) -> Vec<CausticRecord> {
        self.records
            .iter()
            .filter(|r| r.axis == axis)
            .copied()
            .collect()
    }
}

/// How the width at each plane is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Second moments of the mixture marginal.
    Exact,
    /// Knife-edge curves over ±5.25σ of the noiseless marginal.
    KnifeEdge(KnifeEdgeOptions),
}

/// Seed of the curve at (plane, axis), so every curve has its own streams.
fn curve_seed(seed: u64, plane: usize, axis: BeamAxis) -> u64 {
    let mut x = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(2 * plane as u64 + axis as u64 + 1));
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Marginal of a beam at one rail position, kept so that many noisy scans
/// can share one propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct CausticPlane {
    pub z_mm: f64,
    pub axis: BeamAxis,
    pub coords_um: Vec<f64>,
    pub marginal: Vec<f64>,
    pub centroid_um: f64,
    pub w_um: f64,
}

/// Marginals of a mixture at every plane of `plan_mm` (rail coordinates,
/// the beam's own plane at `beam.z_mm()`).
pub fn caustic_planes(
    beam: &MixedBeam,
    plan_mm: &[f64],
    axes: &[BeamAxis],
) -> Result<Vec<CausticPlane>> {
    let mut planes = Vec::with_capacity(plan_mm.len() * axes.len());
    let spectra = beam.spectra()?;
    for &z in plan_mm {
        let b = beam.propagate_spectra(&spectra, z - beam.z_mm())?;
        for &axis in axes {
            let coords_um = b.grid().coords(axis);
            let marginal = b.marginal(axis);
            let (centroid_um, w_um) = second_moment_width(&coords_um, &marginal)?;
            planes.push(CausticPlane {
                z_mm: z,
                axis,
                coords_um,
                marginal,
                centroid_um,
                w_um,
            });
        }
    }
    Ok(planes)
}

/// Widths at every cached plane under `noise`.
pub fn caustic_from_planes(
    planes: &[CausticPlane],
    lambda_nm: f64,
    noise: &NoiseModel,
) -> Result<CausticScan> {
    let mut plan_mm: Vec<f64> = Vec::new();
    let mut records = Vec::with_capacity(planes.len());
    for p in planes {
        if plan_mm.last() != Some(&p.z_mm) {
            plan_mm.push(p.z_mm);
        }
        let plane = plan_mm.len() - 1;
        let record = match noise {
            NoiseModel::Exact => CausticRecord {
                z_mm: p.z_mm,
                axis: p.axis,
                w_um: p.w_um,
                sigma_w_um: 0.0,
                counts: 0.0,
            },
            NoiseModel::KnifeEdge(opts) => {
                let opts = KnifeEdgeOptions {
                    seed: curve_seed(opts.seed, plane, p.axis),
                    ..*opts
                };
                let positions = knife_edge_positions(
                    p.centroid_um,
                    0.5 * p.w_um,
                    KNIFE_POSITIONS,
                    KNIFE_SPAN_SIGMAS,
                );
                let curve = knife_edge_scan_marginal(
                    &p.coords_um,
                    &p.marginal,
                    p.axis,
                    p.z_mm,
                    &positions,
                    &opts,
                )?;
                let est = width_from_knife_edge(&curve, &opts)?;
                CausticRecord {
                    z_mm: p.z_mm,
                    axis: p.axis,
                    w_um: est.w_um,
                    sigma_w_um: est.sigma_w_um,
                    counts: if curve.noiseless {
                        0.0
                    } else {
                        curve.total_counts()
                    },
                }
            }
        };
        records.push(record);
    }
    Ok(CausticScan {
        lambda_nm,
        plan_mm,
        seed: match noise {
            NoiseModel::KnifeEdge(o) if !o.is_noiseless() => Some(o.seed),
            _ => None,
        },
        records,
    })
}

/// Widths of a mixture at every plane of `plan_mm`.
pub fn mixture_caustic(
    beam: &MixedBeam,
    plan_mm: &[f64],
    axes: &[BeamAxis],
    noise: &NoiseModel,
) -> Result<CausticScan> {
    let planes = caustic_planes(beam, plan_mm, axes)?;
    caustic_from_planes(&planes, beam.lambda_nm(), noise)
}

/// Planes for one axis placed by [`iso_sampling_plan`] around the waist and
/// Rayleigh range found by an exact scan over `guess_plan_mm`.
pub fn iso_planes(
    beam: &MixedBeam,
    axis: BeamAxis,
    guess_plan_mm: &[f64],
    inside: usize,
    outside: usize,
) -> Result<Vec<CausticPlane>> {
    let pre = mixture_caustic(beam, guess_plan_mm, &[axis], &NoiseModel::Exact)?;
    let fit = fit_m2(&pre)?.axes[0];
    let plan = iso_sampling_plan(fit.z0_mm, fit.z_r_mm, inside, outside)?;
    caustic_planes(beam, &plan, &[axis])
}

/// Quadratic caustic fit w² = a + b·z + c·z² on one axis (µm², µm²/mm,
/// µm²/mm²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisFit {
    pub axis: BeamAxis,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub covariance: [[f64; 3]; 3],
    pub z0_mm: f64,
    pub w0_um: f64,
    pub z_r_mm: f64,
    pub m2: f64,
    pub sigma_m2: f64,
    /// `None` for unweighted fits, whose residuals carry no error scale.
    pub chi2_dof: Option<f64>,
    pub points: usize,
    /// ≥ 5 planes within z_R and ≥ 5 beyond 2 z_R of the fitted waist.
    pub iso_compliant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M2Fit {
    pub lambda_nm: f64,
    pub axes: Vec<AxisFit>,
}

impl M2Fit {
    pub fn axis(&self, axis: BeamAxis) -> Option<&AxisFit> {
        self.axes.iter().find(|f| f.axis == axis)
    }
}

/// Weighted least squares with weights 1/σ_{w²}², σ_{w²} = 2wσ_w. Without
/// uncertainties the fit is unweighted and the covariance is scaled by the
/// residual variance.
pub fn fit_m2_axis(
    axis: BeamAxis,
    z_mm: &[f64],
    w_um: &[f64],
    sigma_w_um: &[f64],
    lambda_nm: f64,
) -> Result<AxisFit> {
    let n = z_mm.len();
    if n < 6 || w_um.len() != n || sigma_w_um.len() != n {
        return Err(Error::Plan(format!(
            "{n} planes on axis {axis}; at least 6 are required"
        )));
    }
    let weighted = sigma_w_um.iter().all(|s| *s > 0.0);
    let weights: Vec<f64> = w_um
        .iter()
        .zip(sigma_w_um)
        .map(|(w, s)| {
            if weighted {
                1.0 / (2.0 * w * s).powi(2)
            } else {
                1.0
            }
        })
        .collect();
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for k in 0..n {
        let row = Vector3::new(1.0, z_mm[k], z_mm[k] * z_mm[k]);
        ata += weights[k] * row * row.transpose();
        atb += weights[k] * w_um[k] * w_um[k] * row;
    }
    let inv = ata.try_inverse().ok_or_else(|| {
        Error::Plan(format!(
            "planes on axis {axis} do not determine a quadratic"
        ))
    })?;
    let p = inv * atb;
    let (a, b, c) = (p[0], p[1], p[2]);
    let chi2: f64 = (0..n)
        .map(|k| weights[k] * (w_um[k].powi(2) - (a + b * z_mm[k] + c * z_mm[k].powi(2))).powi(2))
        .sum();
    let chi2_dof = chi2 / (n - 3) as f64;
    let cov = if weighted { inv } else { inv * chi2_dof };
    let chi2_dof = weighted.then_some(chi2_dof);
    let d = a * c - 0.25 * b * b;
    if !(c > 0.0 && d > 0.0) {
        return Err(Error::UnphysicalFit { a, b, c });
    }
    let lambda_um = lambda_nm * 1e-3;
    // √(µm⁴/mm²) = 1e-3 µm².
    let k = PI / lambda_um * 1e-3;
    let m2 = k * d.sqrt();
    let grad = Vector3::new(c, -0.5 * b, a) * (k / (2.0 * d.sqrt()));
    let sigma_m2 = (grad.transpose() * cov * grad)[0].max(0.0).sqrt();
    let z0 = -b / (2.0 * c);
    let w0 = (d / c).sqrt();
    let z_r = w0 / c.sqrt();
    let inside = z_mm.iter().filter(|z| (*z - z0).abs() < z_r).count();
    let outside = z_mm.iter().filter(|z| (*z - z0).abs() > 2.0 * z_r).count();
    let mut covariance = [[0.0; 3]; 3];
    for (r, row) in covariance.iter_mut().enumerate() {
        for (s, v) in row.iter_mut().enumerate() {
            *v = cov[(r, s)];
        }
    }
    Ok(AxisFit {
        axis,
        a,
        b,
        c,
        covariance,
        z0_mm: z0,
        w0_um: w0,
        z_r_mm: z_r,
        m2,
        sigma_m2,
        chi2_dof,
        points: n,
        iso_compliant: inside >= 5 && outside >= 5,
    })
}

/// Fit every axis present in the scan.
pub fn fit_m2(scan: &CausticScan) -> Result<M2Fit> {
    let mut axes = Vec::new();
    for axis in [BeamAxis::X, BeamAxis::Y] {
        let r = scan.axis_records(axis);
        if r.is_empty() {
            continue;
        }
        let z: Vec<f64> = r.iter().map(|r| r.z_mm).collect();
        let w: Vec<f64> = r.iter().map(|r| r.w_um).collect();
        let s: Vec<f64> = r.iter().map(|r| r.sigma_w_um).collect();
        axes.push(fit_m2_axis(axis, &z, &w, &s, scan.lambda_nm)?);
    }
    if axes.is_empty() {
        return Err(Error::Plan("caustic scan has no records".into()));
    }
    Ok(M2Fit {
        lambda_nm: scan.lambda_nm,
        axes,
    })
}
