//! Fitting the unpublished fabrication parameters (Λ, Δn_H, Δn_V) to observed
//! band positions with a bounded Levenberg–Marquardt solver.

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelWindow, PhaseMatchModel, TripletLabels};
use crate::error::{Error, Result};
use crate::modesolver::{ModeLabel, Waveguide};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease of an accepted step is below this.
    pub ftol: f64,
    /// Stop when every relative parameter change is below this.
    pub xtol: f64,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 40,
            ftol: 1e-9,
            xtol: 1e-10,
            fd_step: 1e-6,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// ½·Σ r².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Minimize ½‖r(x)‖² subject to `lower ≤ x ≤ upper`. Steps are projected
/// onto the box; the Jacobian uses one-sided differences that stay inside it.
pub fn levenberg_marquardt<F>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n || (0..n).any(|i| !(lower[i] <= upper[i])) {
        return Err(Error::InvalidInput(
            "bounds do not match the parameter vector".into(),
        ));
    }
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let mut r = f(&x)?;
    let m = r.len();
    let mut c = cost(&r);
    let mut mu = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for k in 0..n {
            let mut h = opts.fd_step * x[k].abs().max(1e-3 * (upper[k] - lower[k]).abs().min(1.0));
            if x[k] + h > upper[k] {
                h = -h;
            }
            let mut xp = x.clone();
            xp[k] += h;
            let rp = f(&xp)?;
            for i in 0..m {
                jac[(i, k)] = (rp[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        if grad.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else {
                mu *= 10.0;
                continue;
            };
            let mut xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut xn);
            let rn = f(&xn)?;
            let cn = cost(&rn);
            if cn < c {
                let dx_small =
                    (0..n).all(|k| (xn[k] - x[k]).abs() <= opts.xtol * x[k].abs().max(1e-12));
                let df_small = (c - cn) <= opts.ftol * c;
                x = xn;
                r = rn;
                c = cn;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if dx_small || df_small || c == 0.0 {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted || converged {
            converged = converged || !accepted;
            break;
        }
    }
    Ok(LmOutcome {
        x,
        residuals: r,
        cost: c,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationKind {
    /// Hinge penalty `max(0, target + margin − separation)`; the pass check
    /// uses the bare target.
    AtLeast,
    Exact,
}

/// One calibration observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum Target {
    /// Degenerate-line center of a band (nm).
    BandCenter {
        triplet: TripletLabels,
        target_nm: f64,
        tolerance_nm: f64,
    },
    /// Degenerate-line distance from `reference_nm` to the nearest allowed band
    /// of `pump` with higher-order H and/or V modes.
    Separation {
        pump: ModeLabel,
        reference_nm: f64,
        target_nm: f64,
        kind: SeparationKind,
        tolerance_nm: f64,
    },
    /// Width along λ_H at the degenerate λ_V (nm) of the band centered
    /// nearest `near_nm`; residual scaled by `weight`.
    Fwhm {
        triplet: TripletLabels,
        near_nm: f64,
        target_nm: f64,
        tolerance_nm: f64,
        weight: f64,
    },
}

impl Target {
    pub fn name(&self) -> String {
        match self {
            Target::BandCenter { triplet, .. } => format!("center[{triplet}]"),
            Target::Separation { pump, .. } => format!("separation[{pump}P]"),
            Target::Fwhm { triplet, .. } => format!("fwhm[{triplet}]"),
        }
    }
}

/// Observed band properties with the conventional tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub degenerate_center_nm: f64,
    pub center_tolerance_nm: f64,
    pub min_separation_nm: f64,
    pub fwhm_nm: f64,
    pub fwhm_tolerance_nm: f64,
    pub fwhm_weight: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            degenerate_center_nm: 799.8,
            center_tolerance_nm: 0.05,
            min_separation_nm: 5.0,
            fwhm_nm: 0.7,
            fwhm_tolerance_nm: 0.3,
            fwhm_weight: 0.1,
        }
    }
}

impl CalibrationTargets {
    pub fn targets(&self) -> Vec<Target> {
        vec![
            Target::BandCenter {
                triplet: TripletLabels::FUNDAMENTAL,
                target_nm: self.degenerate_center_nm,
                tolerance_nm: self.center_tolerance_nm,
            },
            Target::Separation {
                pump: ModeLabel::FUNDAMENTAL,
                reference_nm: self.degenerate_center_nm,
                target_nm: self.min_separation_nm,
                kind: SeparationKind::AtLeast,
                tolerance_nm: 0.0,
            },
            Target::Fwhm {
                triplet: TripletLabels::FUNDAMENTAL,
                near_nm: self.degenerate_center_nm,
                target_nm: self.fwhm_nm,
                tolerance_nm: self.fwhm_tolerance_nm,
                weight: self.fwhm_weight,
            },
        ]
    }

    /// Model sampling used while calibrating: ±16 nm around the center, only
    /// the fundamental pump mode.
    pub fn window(&self, max_label: u8) -> ModelWindow {
        ModelWindow::centered(self.degenerate_center_nm, 16.0, 2.0, max_label, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub poling_period_um: f64,
    pub delta_n_h: f64,
    pub delta_n_v: f64,
}

impl CalibrationParams {
    pub const LOWER: [f64; 3] = [1.0, 1e-3, 1e-3];
    pub const UPPER: [f64; 3] = [500.0, 5e-2, 5e-2];

    fn to_vec(self) -> Vec<f64> {
        vec![self.poling_period_um, self.delta_n_h, self.delta_n_v]
    }

    fn from_slice(x: &[f64]) -> Self {
        CalibrationParams {
            poling_period_um: x[0],
            delta_n_h: x[1],
            delta_n_v: x[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetResidual {
    pub name: String,
    pub target: f64,
    /// Achieved value; `None` when the observable does not exist (no band in
    /// the search window).
    pub achieved: Option<f64>,
    /// Weighted residual entering the least-squares cost.
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub params: CalibrationParams,
    pub residuals: Vec<TargetResidual>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub passed: bool,
}

impl CalibrationReport {
    pub fn failures(&self) -> Vec<&TargetResidual> {
        self.residuals.iter().filter(|r| !r.passed).collect()
    }
}

/// Extra distance the separation hinge asks for, so that the optimum does
/// not sit exactly on the pass/fail boundary.
const HINGE_MARGIN_NM: f64 = 0.1;

/// Half-width of the degenerate-line search for band observables.
const SEARCH_HALF_WINDOW_NM: f64 = 12.0;

/// Evaluate every target on a built model.
pub fn evaluate_targets(
    model: &PhaseMatchModel,
    targets: &[Target],
) -> Result<Vec<TargetResidual>> {
    targets.iter().map(|t| evaluate_target(model, t)).collect()
}

fn evaluate_target(model: &PhaseMatchModel, target: &Target) -> Result<TargetResidual> {
    let name = target.name();
    Ok(match *target {
        Target::BandCenter {
            triplet,
            target_nm,
            tolerance_nm,
        } => match model.degenerate_center(triplet, target_nm, SEARCH_HALF_WINDOW_NM) {
            Ok(c) => TargetResidual {
                name,
                target: target_nm,
                achieved: Some(c.lambda_h_nm),
                residual: c.lambda_h_nm - target_nm,
                tolerance: tolerance_nm,
                passed: (c.lambda_h_nm - target_nm).abs() <= tolerance_nm,
            },
            Err(Error::NoBracket { f_lo, .. }) => TargetResidual {
                name,
                target: target_nm,
                achieved: None,
                residual: SEARCH_HALF_WINDOW_NM * f_lo.signum(),
                tolerance: tolerance_nm,
                passed: false,
            },
            Err(e) => return Err(e),
        },
        Target::Separation {
            pump,
            reference_nm,
            target_nm,
            kind,
            tolerance_nm,
        } => {
            let found = model.nearest_band_separation(pump, reference_nm, SEARCH_HALF_WINDOW_NM)?;
            let sep = found.map_or(SEARCH_HALF_WINDOW_NM, |(_, d)| d);
            let (residual, passed) = match kind {
                SeparationKind::AtLeast => (
                    (target_nm + HINGE_MARGIN_NM - sep).max(0.0),
                    sep >= target_nm,
                ),
                SeparationKind::Exact => (sep - target_nm, (sep - target_nm).abs() <= tolerance_nm),
            };
            TargetResidual {
                name,
                target: target_nm,
                achieved: found.map(|(_, d)| d),
                residual,
                tolerance: tolerance_nm,
                passed,
            }
        }
        Target::Fwhm {
            triplet,
            near_nm,
            target_nm,
            tolerance_nm,
            weight,
        } => {
            let width = model
                .degenerate_center(triplet, near_nm, SEARCH_HALF_WINDOW_NM)
                .and_then(|c| model.band_fwhm(&c));
            match width {
                Ok(w) => TargetResidual {
                    name,
                    target: target_nm,
                    achieved: Some(w),
                    residual: weight * (w - target_nm),
                    tolerance: tolerance_nm,
                    passed: (w - target_nm).abs() <= tolerance_nm,
                },
                Err(Error::NoBracket { .. }) => TargetResidual {
                    name,
                    target: target_nm,
                    achieved: None,
                    residual: weight * target_nm,
                    tolerance: tolerance_nm,
                    passed: false,
                },
                Err(e) => return Err(e),
            }
        }
    })
}

/// Build the model for one parameter set from a template waveguide.
pub fn model_for(
    template: &Waveguide,
    window: ModelWindow,
    params: CalibrationParams,
) -> Result<PhaseMatchModel> {
    let mut wg = template.clone();
    wg.geometry.poling_period_um = params.poling_period_um;
    wg.geometry.delta_n_h = params.delta_n_h;
    wg.geometry.delta_n_v = params.delta_n_v;
    wg.geometry.validate()?;
    PhaseMatchModel::build(&wg, window)
}

/// Bounded least squares over (Λ, Δn_H, Δn_V). The period is first seeded so
/// that the first band-center target is met exactly at the initial indices.
/// The report's `passed` flag is the conjunction of every target's tolerance
/// check; callers decide how to surface a failure.
pub fn calibrate(
    template: &Waveguide,
    window: ModelWindow,
    targets: &[Target],
    initial: CalibrationParams,
    opts: &LmOptions,
) -> Result<CalibrationReport> {
    if targets.is_empty() {
        return Err(Error::Calibration("no calibration targets".into()));
    }
    let cache: RefCell<Option<([u64; 2], PhaseMatchModel)>> = RefCell::new(None);
    let model_at = |p: CalibrationParams| -> Result<PhaseMatchModel> {
        let key = [p.delta_n_h.to_bits(), p.delta_n_v.to_bits()];
        if let Some((k, m)) = cache.borrow().as_ref() {
            if *k == key {
                return m.with_period(p.poling_period_um);
            }
        }
        let m = model_for(template, window, p)?;
        *cache.borrow_mut() = Some((key, m.clone()));
        Ok(m)
    };

    let mut start = initial;
    if let Some(Target::BandCenter {
        triplet, target_nm, ..
    }) = targets
        .iter()
        .find(|t| matches!(t, Target::BandCenter { .. }))
    {
        let m = model_at(start)?;
        let unpoled = m.unpoled_mismatch(*triplet, *target_nm, *target_nm)?;
        if unpoled > 0.0 {
            start.poling_period_um = (2.0 * PI / unpoled)
                .clamp(CalibrationParams::LOWER[0], CalibrationParams::UPPER[0]);
        }
    }

    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        let m = model_at(CalibrationParams::from_slice(x))?;
        Ok(evaluate_targets(&m, targets)?
            .into_iter()
            .map(|r| r.residual)
            .collect())
    };
    let outcome = levenberg_marquardt(
        residuals,
        &start.to_vec(),
        &CalibrationParams::LOWER,
        &CalibrationParams::UPPER,
        opts,
    )?;
    let params = CalibrationParams::from_slice(&outcome.x);
    let detail = evaluate_targets(&model_at(params)?, targets)?;
    let passed = detail.iter().all(|r| r.passed);
    Ok(CalibrationReport {
        params,
        residuals: detail,
        cost: outcome.cost,
        iterations: outcome.iterations,
        converged: outcome.converged,
        passed,
    })
}
