//! One-dimensional scalar slab solvers.
//!
//! The depth direction is solved by shooting: the field is integrated with
//! fourth-order Runge–Kutta from the substrate side toward the cover, where the
//! logarithmic derivative must match the cover's evanescent tail. Each root is
//! found at step `h` and `h/2` and Richardson-extrapolated. The symmetric step
//! profile used laterally has a closed-form transcendental relation and is
//! solved directly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::brent;

/// A bound mode of a 1D index profile with its normalized amplitude profile
/// (∫ u² dx = 1 over the whole line).
#[derive(Debug, Clone, PartialEq)]
pub struct SlabMode {
    pub n_eff: f64,
    pub nodes: usize,
    shape: SlabShape,
}

#[derive(Debug, Clone, PartialEq)]
enum SlabShape {
    Step {
        half_width: f64,
        kappa: f64,
        gamma: f64,
        odd: bool,
        scale: f64,
    },
    Sampled {
        a: f64,
        step: f64,
        value: Vec<f64>,
        slope: Vec<f64>,
        gamma_left: f64,
        gamma_right: f64,
    },
}

impl SlabMode {
    pub fn value(&self, x: f64) -> f64 {
        match &self.shape {
            SlabShape::Step {
                half_width,
                kappa,
                gamma,
                odd,
                scale,
            } => {
                let a = *half_width;
                let inside = x.abs() <= a;
                let v = match (odd, inside) {
                    (false, true) => (kappa * x).cos(),
                    (false, false) => (kappa * a).cos() * (-gamma * (x.abs() - a)).exp(),
                    (true, true) => (kappa * x).sin(),
                    (true, false) => {
                        x.signum() * (kappa * a).sin() * (-gamma * (x.abs() - a)).exp()
                    }
                };
                scale * v
            }
            SlabShape::Sampled {
                a,
                step,
                value,
                slope,
                gamma_left,
                gamma_right,
            } => {
                let last = value.len() - 1;
                let b = a + step * last as f64;
                if x <= *a {
                    value[0] * (gamma_left * (x - a)).exp()
                } else if x >= b {
                    value[last] * (-gamma_right * (x - b)).exp()
                } else {
                    let t = (x - a) / step;
                    let k = (t.floor() as usize).min(last - 1);
                    let s = t - k as f64;
                    let s2 = s * s;
                    let s3 = s2 * s;
                    (2.0 * s3 - 3.0 * s2 + 1.0) * value[k]
                        + (s3 - 2.0 * s2 + s) * step * slope[k]
                        + (-2.0 * s3 + 3.0 * s2) * value[k + 1]
                        + (s3 - s2) * step * slope[k + 1]
                }
            }
        }
    }

    /// Rough extent of the mode: the interval outside which |u|² carries a
    /// negligible fraction of the power.
    pub fn support(&self) -> (f64, f64) {
        match &self.shape {
            SlabShape::Step {
                half_width, gamma, ..
            } => {
                let tail = 12.0 / gamma;
                (-half_width - tail, half_width + tail)
            }
            SlabShape::Sampled {
                a,
                step,
                value,
                gamma_left,
                gamma_right,
                ..
            } => {
                let b = a + step * (value.len() - 1) as f64;
                (a - 12.0 / gamma_left, b + 12.0 / gamma_right)
            }
        }
    }
}

/// Depth index profiles below the surface (y ≥ 0 into the substrate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthProfile {
    /// `n(y) = n_sub + Δn·exp(−y/d)`
    #[default]
    IndexExponential,
    /// `n²(y) = n_sub² + ((n_sub + Δn)² − n_sub²)·exp(−y/d)`
    PermittivityExponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSlab {
    pub n_sub: f64,
    pub delta_n: f64,
    pub depth_um: f64,
    pub n_cover: f64,
    pub profile: DepthProfile,
}

impl DepthSlab {
    pub fn permittivity(&self, y: f64) -> f64 {
        if y < 0.0 {
            return self.n_cover * self.n_cover;
        }
        let decay = (-y / self.depth_um).exp();
        match self.profile {
            DepthProfile::IndexExponential => {
                let n = self.n_sub + self.delta_n * decay;
                n * n
            }
            DepthProfile::PermittivityExponential => {
                let top = self.n_sub + self.delta_n;
                self.n_sub * self.n_sub + (top * top - self.n_sub * self.n_sub) * decay
            }
        }
    }

    pub fn solve(&self, lambda_um: f64) -> Result<Vec<SlabMode>> {
        self.solve_first(lambda_um, usize::MAX)
    }

    /// The `max_modes` highest-index modes only; the others are located but
    /// not refined.
    pub fn solve_first(&self, lambda_um: f64, max_modes: usize) -> Result<Vec<SlabMode>> {
        if !(self.delta_n > 0.0 && self.depth_um > 0.0) {
            return Err(Error::InvalidInput(format!(
                "depth slab needs delta_n > 0 and depth > 0 (got {}, {})",
                self.delta_n, self.depth_um
            )));
        }
        if self.n_cover >= self.n_sub {
            return Err(Error::InvalidInput(format!(
                "cover index {} must be below substrate index {}",
                self.n_cover, self.n_sub
            )));
        }
        let eps_sub = self.n_sub * self.n_sub;
        let excess = self.permittivity(0.0) - eps_sub;
        let span = (self.depth_um * (excess / 1e-9).ln()).max(10.0 * self.depth_um);
        let problem = ShootingProblem::new(
            lambda_um,
            0.0,
            span,
            self.n_cover * self.n_cover,
            eps_sub,
            |y| self.permittivity(y),
        );
        problem.solve(max_modes)
    }
}

/// Exponential depth profile with the default index-exponential law.
pub fn solve_depth_slab(
    n_sub: f64,
    delta_n: f64,
    depth_um: f64,
    n_cover: f64,
    lambda_um: f64,
) -> Result<Vec<SlabMode>> {
    DepthSlab {
        n_sub,
        delta_n,
        depth_um,
        n_cover,
        profile: DepthProfile::IndexExponential,
    }
    .solve(lambda_um)
}

/// Symmetric step slab of full width `width_um`.
pub fn solve_lateral_slab(
    n_core: f64,
    n_clad: f64,
    width_um: f64,
    lambda_um: f64,
) -> Result<Vec<SlabMode>> {
    if !(width_um > 0.0 && lambda_um > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lateral slab needs positive width and wavelength (got {width_um}, {lambda_um})"
        )));
    }
    if n_core <= n_clad {
        return Ok(Vec::new());
    }
    let k = 2.0 * PI / lambda_um;
    let a = 0.5 * width_um;
    let v = k * a * (n_core * n_core - n_clad * n_clad).sqrt();
    let mut modes = Vec::new();
    let mut m = 0usize;
    loop {
        let lo = m as f64 * PI / 2.0;
        if lo >= v {
            break;
        }
        let hi = ((m + 1) as f64 * PI / 2.0).min(v);
        let odd = m % 2 == 1;
        // u·sin u − w·cos u (even) or u·cos u + w·sin u (odd), w = √(V² − u²)
        let f = |u: f64| {
            let w = (v * v - u * u).max(0.0).sqrt();
            if odd {
                u * u.cos() + w * u.sin()
            } else {
                u * u.sin() - w * u.cos()
            }
        };
        let (fa, fb) = (f(lo), f(hi));
        let u = match brent(f, lo, hi, fa, fb, 1e-15, 0.0, 200) {
            Some(u) => u,
            None if m == 0 => {
                return Err(Error::Solver {
                    lambda_um,
                    lo,
                    hi,
                    detail: "lateral fundamental not bracketed".into(),
                })
            }
            None => break,
        };
        let w = (v * v - u * u).max(0.0).sqrt();
        if w <= 0.0 {
            break;
        }
        let kappa = u / a;
        let gamma = w / a;
        let n_eff = (n_core * n_core - (kappa / k).powi(2)).sqrt();
        let (c, s) = (u.cos(), u.sin());
        let norm = if odd {
            a - (2.0 * u).sin() / (2.0 * kappa) + s * s / gamma
        } else {
            a + (2.0 * u).sin() / (2.0 * kappa) + c * c / gamma
        };
        modes.push(SlabMode {
            n_eff,
            nodes: m,
            shape: SlabShape::Step {
                half_width: a,
                kappa,
                gamma,
                odd,
                scale: 1.0 / norm.sqrt(),
            },
        });
        m += 1;
    }
    Ok(modes)
}

/// Symmetric graded channel with error-function edges of width `edge_um`:
/// `n(x) = n_clad + (n_core − n_clad)·½[erf((x + w/2)/s) − erf((x − w/2)/s)]`.
pub fn solve_lateral_graded(
    n_core: f64,
    n_clad: f64,
    width_um: f64,
    edge_um: f64,
    lambda_um: f64,
) -> Result<Vec<SlabMode>> {
    if n_core <= n_clad {
        return Ok(Vec::new());
    }
    if !(edge_um > 0.0) {
        return Err(Error::InvalidInput(format!(
            "graded edge width must be > 0, got {edge_um}"
        )));
    }
    let half = 0.5 * width_um + 6.0 * edge_um;
    let dn = n_core - n_clad;
    let profile = move |x: f64| {
        let g = 0.5 * (erf((x + 0.5 * width_um) / edge_um) - erf((x - 0.5 * width_um) / edge_um));
        let n = n_clad + dn * g;
        n * n
    };
    let eps_clad = profile(half).min(profile(-half));
    ShootingProblem::new(lambda_um, -half, half, eps_clad, eps_clad, profile).solve(usize::MAX)
}

/// Abramowitz–Stegun 7.1.26, |error| < 1.5e-7; only shapes the graded profile.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736
                + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    if x >= 0.0 {
        y
    } else {
        -y
    }
}

struct ShootingProblem {
    k: f64,
    lambda_um: f64,
    a: f64,
    eps_left: f64,
    eps_right: f64,
    eps_max: f64,
    /// Permittivity sampled every `step / 4`.
    eps: Vec<f64>,
    step: f64,
    steps: usize,
}

struct Shot {
    mismatch: f64,
    nodes: usize,
    value: Vec<f64>,
    slope: Vec<f64>,
}

impl ShootingProblem {
    fn new(
        lambda_um: f64,
        a: f64,
        b: f64,
        eps_left: f64,
        eps_right: f64,
        profile: impl Fn(f64) -> f64,
    ) -> Self {
        let target = 0.1 * lambda_um;
        let steps = ((b - a) / target).ceil().max(64.0) as usize;
        let step = (b - a) / steps as f64;
        let q = step / 4.0;
        let eps: Vec<f64> = (0..=4 * steps).map(|i| profile(a + q * i as f64)).collect();
        let eps_max = eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ShootingProblem {
            k: 2.0 * PI / lambda_um,
            lambda_um,
            a,
            eps_left,
            eps_right,
            eps_max,
            eps,
            step,
            steps,
        }
    }

    /// Integrate from `b` to `a` at step `step / refine` for trial `N = n_eff²`.
    fn shoot(&self, n2: f64, refine: usize, keep: bool) -> Shot {
        let k2 = self.k * self.k;
        let gamma_r = self.k * (n2 - self.eps_right).max(0.0).sqrt();
        let gamma_l = self.k * (n2 - self.eps_left).max(0.0).sqrt();
        let n = self.steps * refine;
        let s = self.step / refine as f64;
        let stride = 4 / refine;
        let half = stride / 2;
        let mut y = 1.0f64;
        let mut p = -gamma_r;
        let mut value = Vec::new();
        let mut slope = Vec::new();
        if keep {
            value = vec![0.0; n + 1];
            slope = vec![0.0; n + 1];
            value[n] = y;
            slope[n] = p;
        }
        let mut nodes = 0usize;
        let q = |idx: usize| k2 * (n2 - self.eps[idx]);
        for i in (0..n).rev() {
            let i0 = (i + 1) * stride;
            let (q0, qm, q1) = (q(i0), q(i0 - half), q(i0 - stride));
            let h = -s;
            let k1y = p;
            let k1p = q0 * y;
            let k2y = p + 0.5 * h * k1p;
            let k2p = qm * (y + 0.5 * h * k1y);
            let k3y = p + 0.5 * h * k2p;
            let k3p = qm * (y + 0.5 * h * k2y);
            let k4y = p + h * k3p;
            let k4p = q1 * (y + h * k3y);
            let ny = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            let np = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            if ny.signum() != y.signum() && ny != 0.0 && y != 0.0 {
                nodes += 1;
            }
            y = ny;
            p = np;
            if keep {
                value[i] = y;
                slope[i] = p;
            }
            if y.abs() > 1e150 {
                y *= 1e-150;
                p *= 1e-150;
                if keep {
                    for v in value[i..].iter_mut().chain(slope[i..].iter_mut()) {
                        *v *= 1e-150;
                    }
                }
            }
        }
        let mismatch = (p - gamma_l * y) / (y * y + (p / self.k).powi(2)).sqrt();
        Shot {
            mismatch,
            nodes,
            value,
            slope,
        }
    }

    fn root(&self, lo: f64, hi: f64, f_lo: f64, f_hi: f64, refine: usize) -> Result<f64> {
        let tol = 1e-15 * self.eps_max;
        brent(
            |n2| self.shoot(n2, refine, false).mismatch,
            lo,
            hi,
            f_lo,
            f_hi,
            tol,
            0.0,
            200,
        )
        .ok_or_else(|| self.solver_error(lo, hi, "bracket lost during refinement"))
    }

    fn solver_error(&self, lo: f64, hi: f64, detail: &str) -> Error {
        Error::Solver {
            lambda_um: self.lambda_um,
            lo: lo.sqrt(),
            hi: hi.sqrt(),
            detail: detail.into(),
        }
    }

    fn solve(&self, max_modes: usize) -> Result<Vec<SlabMode>> {
        let floor = self.eps_left.max(self.eps_right);
        if self.eps_max <= floor {
            return Ok(Vec::new());
        }
        let lo = floor + 1e-12 * floor;
        let hi = self.eps_max;
        // Bound modes are close to evenly spaced in √(N − floor), so the scan
        // is uniform in that variable and runs down from the top, stopping once
        // `max_modes` roots are bracketed. After a full scan, zeros of the shot
        // from just above cutoff give a lower bound on the mode count (the last
        // zero may sit in the unbounded tail).
        let q_lo = ((lo - floor) / (hi - floor)).sqrt();
        let mut samples = 64usize;
        for _ in 0..4 {
            let at = |i: usize| {
                let q = q_lo + (1.0 - q_lo) * i as f64 / samples as f64;
                floor + (hi - floor) * q * q
            };
            let mut roots = Vec::new();
            let mut upper = (at(samples), self.shoot(at(samples), 1, false).mismatch);
            for i in (0..samples).rev() {
                let n2 = at(i);
                let lower = (n2, self.shoot(n2, 1, false).mismatch);
                if lower.1 == 0.0 || lower.1.signum() != upper.1.signum() {
                    roots.push(self.root(lower.0, upper.0, lower.1, upper.1, 1)?);
                    if roots.len() == max_modes {
                        break;
                    }
                }
                upper = lower;
            }
            let complete =
                roots.len() == max_modes || roots.len() >= self.shoot(lo, 1, false).nodes;
            let consistent = complete
                && roots
                    .iter()
                    .enumerate()
                    .all(|(j, &n2)| self.shoot(n2, 1, false).nodes == j);
            if consistent {
                return roots.into_iter().map(|n2| self.refine_mode(n2)).collect();
            }
            samples *= 4;
        }
        Err(self.solver_error(lo, hi, "mode node counts are not consecutive"))
    }

    /// Re-solve at half step near `n2_coarse` and Richardson-extrapolate.
    fn refine_mode(&self, n2_coarse: f64) -> Result<SlabMode> {
        let f = |n2: f64| self.shoot(n2, 2, false).mismatch;
        let f0 = f(n2_coarse);
        let mut delta = 1e-10 * n2_coarse;
        let mut bracket = None;
        for _ in 0..40 {
            let (l, h) = (n2_coarse - delta, n2_coarse + delta);
            let (fl, fh) = (f(l), f(h));
            if fl.signum() != f0.signum() {
                bracket = Some((l, n2_coarse, fl, f0));
                break;
            }
            if fh.signum() != f0.signum() {
                bracket = Some((n2_coarse, h, f0, fh));
                break;
            }
            delta *= 2.0;
        }
        let (l, h, fl, fh) = bracket.ok_or_else(|| {
            self.solver_error(n2_coarse, n2_coarse, "half-step root not bracketed")
        })?;
        let n2_fine = self.root(l, h, fl, fh, 2)?;
        let n2 = n2_fine + (n2_fine - n2_coarse) / 15.0;
        let shot = self.shoot(n2, 2, true);
        let gamma_l = self.k * (n2 - self.eps_left).max(0.0).sqrt();
        let gamma_r = self.k * (n2 - self.eps_right).max(0.0).sqrt();
        let mut value = shot.value;
        let mut slope = shot.slope;
        let s = self.step / 2.0;
        // Simpson over the interior (even interval count) plus analytic tails.
        let m = value.len() - 1;
        let mut interior = value[0].powi(2) + value[m].powi(2);
        for (i, v) in value.iter().enumerate().take(m).skip(1) {
            interior += if i % 2 == 1 { 4.0 } else { 2.0 } * v * v;
        }
        interior *= s / 3.0;
        let norm =
            interior + value[0].powi(2) / (2.0 * gamma_l) + value[m].powi(2) / (2.0 * gamma_r);
        let peak = value.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let first = value
            .iter()
            .find(|v| v.abs() > 1e-6 * peak)
            .copied()
            .unwrap_or(1.0);
        let scale = first.signum() / norm.sqrt();
        for v in value.iter_mut().chain(slope.iter_mut()) {
            *v *= scale;
        }
        Ok(SlabMode {
            n_eff: n2.sqrt(),
            nodes: shot.nodes,
            shape: SlabShape::Sampled {
                a: self.a,
                step: s,
                value,
                slope,
                gamma_left: gamma_l,
                gamma_right: gamma_r,
            },
        })
    }
}
