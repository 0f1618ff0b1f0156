use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BeamAxis, MixedBeam};
use crate::error::{Error, Result};

/// How the background under the reconstructed marginal is removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PedestalMode {
    /// Background level and plateau taken from the outer 10% of positions
    /// on each side; those zones are excluded from the moments.
    OuterTenPercent,
    /// Moments restricted to an aperture of ± `half_width_sigmas`·σ about
    /// the centroid, iterated to self-consistency.
    Aperture { half_width_sigmas: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnifeEdgeOptions {
    /// Mean detected counts per position with the edge withdrawn;
    /// `f64::INFINITY` records the expectation without noise.
    pub budget: f64,
    /// Mean accidental counts per position, independent of the edge.
    pub floor: f64,
    pub seed: u64,
    pub bootstrap: usize,
    pub pedestal: PedestalMode,
}

impl Default for KnifeEdgeOptions {
    fn default() -> Self {
        KnifeEdgeOptions {
            budget: 1e5,
            floor: 0.0,
            seed: 0,
            bootstrap: 200,
            pedestal: PedestalMode::OuterTenPercent,
        }
    }
}

impl KnifeEdgeOptions {
    pub fn noiseless() -> Self {
        KnifeEdgeOptions {
            budget: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.budget.is_infinite()
    }

    fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.floor >= 0.0 && self.floor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "knife-edge budget {} and floor {}",
                self.budget, self.floor
            )));
        }
        if let PedestalMode::Aperture { half_width_sigmas } = self.pedestal {
            if !(half_width_sigmas > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "aperture half-width {half_width_sigmas} σ"
                )));
            }
        }
        Ok(())
    }
}

/// Transmitted counts versus edge position; the edge blocks x < p.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnifeEdgeCurve {
    pub axis: BeamAxis,
    pub z_mm: f64,
    pub positions_um: Vec<f64>,
    /// Expected transmission T(p) of the beam.
    pub transmission: Vec<f64>,
    pub counts: Vec<f64>,
    pub noiseless: bool,
}

impl KnifeEdgeCurve {
    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KnifeEdgeWidth {
    pub w_um: f64,
    pub sigma_w_um: f64,
    pub centroid_um: f64,
}

/// `n` equally spaced positions over `center ± span_sigmas·σ`.
pub fn knife_edge_positions(center_um: f64, sigma_um: f64, n: usize, span_sigmas: f64) -> Vec<f64> {
    let half = span_sigmas * sigma_um;
    (0..n)
        .map(|k| center_um - half + 2.0 * half * k as f64 / (n - 1) as f64)
        .collect()
}

/// Fraction of the marginal at coordinates > p, by exact integration of its
/// cubic-convolution (Catmull-Rom) interpolant on a uniform grid. Unlike the
/// piecewise-linear interpolant, this one keeps the discrete second moment.
fn transmission(coords: &[f64], marginal: &[f64], positions: &[f64]) -> Vec<f64> {
    let n = coords.len();
    let h = (coords[n - 1] - coords[0]) / (n - 1) as f64;
    let at = |i: isize| marginal[i.clamp(0, n as isize - 1) as usize];
    // ∫₀ᵗ of the cubic on cell k, in units of h.
    let partial = |k: usize, t: f64| {
        let k = k as isize;
        let (p0, p1, p2, p3) = (at(k - 1), at(k), at(k + 1), at(k + 2));
        0.5 * t
            * (2.0 * p1
                + t * ((p2 - p0) / 2.0
                    + t * ((2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) / 3.0
                        + t * (3.0 * p1 - p0 - 3.0 * p2 + p3) / 4.0)))
    };
    let mut tail = vec![0.0; n];
    for k in (0..n - 1).rev() {
        tail[k] = tail[k + 1] + h * partial(k, 1.0);
    }
    let total = tail[0];
    positions
        .iter()
        .map(|&p| {
            if p <= coords[0] {
                return 1.0;
            }
            if p >= coords[n - 1] {
                return 0.0;
            }
            let k = (((p - coords[0]) / h).floor() as usize).min(n - 2);
            let t = (p - coords[k]) / h;
            (tail[k + 1] + h * (partial(k, 1.0) - partial(k, t))) / total
        })
        .collect()
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        Poisson::new(mean)
            .expect("finite positive mean")
            .sample(rng)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Counts behind an edge at each position: Poisson with mean
/// `budget·T(p) + floor`, one RNG stream per position.
pub fn knife_edge_scan(
    beam: &MixedBeam,
    axis: BeamAxis,
    positions_um: &[f64],
    opts: &KnifeEdgeOptions,
) -> Result<KnifeEdgeCurve> {
    let coords = beam.grid().coords(axis);
    knife_edge_scan_marginal(
        &coords,
        &beam.marginal(axis),
        axis,
        beam.z_mm(),
        positions_um,
        opts,
    )
}

/// [`knife_edge_scan`] on a precomputed marginal.
pub fn knife_edge_scan_marginal(
    coords: &[f64],
    marginal: &[f64],
    axis: BeamAxis,
    z_mm: f64,
    positions_um: &[f64],
    opts: &KnifeEdgeOptions,
) -> Result<KnifeEdgeCurve> {
    opts.validate()?;
    if positions_um.len() < 5 || positions_um.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "knife-edge positions must be ≥ 5 and strictly increasing".into(),
        ));
    }
    if coords.len() != marginal.len() || coords.len() < 2 {
        return Err(Error::Shape(format!(
            "{} coordinates for {} marginal samples",
            coords.len(),
            marginal.len()
        )));
    }
    let t = transmission(coords, marginal, positions_um);
    let covered = t[0] - t[t.len() - 1];
    if covered < 0.99 {
        return Err(Error::Coverage { fraction: covered });
    }
    let counts = if opts.is_noiseless() {
        t.clone()
    } else {
        t.iter()
            .enumerate()
            .map(|(k, &tk)| {
                poisson(
                    &mut stream_rng(opts.seed, k as u64),
                    opts.budget * tk + opts.floor,
                )
            })
            .collect()
    };
    Ok(KnifeEdgeCurve {
        axis,
        z_mm,
        positions_um: positions_um.to_vec(),
        transmission: t,
        counts,
        noiseless: opts.is_noiseless(),
    })
}

/// Non-increasing least-squares fit (pool adjacent violators).
fn antitonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

/// (w, centroid) of one count curve.
fn reconstruct(positions: &[f64], counts: &[f64], pedestal: PedestalMode) -> Result<(f64, f64)> {
    let n = positions.len();
    let outer = ((0.1 * n as f64).round() as usize).max(1);
    let fitted = antitonic(counts);
    let plateau = fitted[..outer].iter().sum::<f64>() / outer as f64;
    let floor = fitted[n - outer..].iter().sum::<f64>() / outer as f64;
    if !(plateau > floor) {
        return Err(Error::Reconstruction(
            "no transmission drop across the span".into(),
        ));
    }
    let t: Vec<f64> = fitted
        .iter()
        .map(|c| (c - floor) / (plateau - floor))
        .collect();
    let mids: Vec<f64> = positions.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let widths: Vec<f64> = positions.windows(2).map(|p| p[1] - p[0]).collect();
    // Mass of the marginal in each interval.
    let mut mass: Vec<f64> = t.windows(2).map(|w| w[0] - w[1]).collect();
    let h2 = widths.iter().map(|h| h * h).sum::<f64>() / widths.len() as f64;

    let moments = |mass: &[f64], keep: &dyn Fn(f64) -> bool| -> Option<(f64, f64)> {
        let (mut m0, mut m1) = (0.0, 0.0);
        for (x, m) in mids.iter().zip(mass) {
            if keep(*x) {
                m0 += m;
                m1 += m * x;
            }
        }
        if m0 <= 0.0 {
            return None;
        }
        let mu = m1 / m0;
        let var = mids
            .iter()
            .zip(mass)
            .filter(|(x, _)| keep(**x))
            .map(|(x, m)| m * (x - mu).powi(2))
            .sum::<f64>()
            / m0;
        Some((mu, (var - h2 / 12.0).max(0.0)))
    };

    let (mu, var) = match pedestal {
        PedestalMode::OuterTenPercent => {
            let last = mass.len() - 1;
            for (k, m) in mass.iter_mut().enumerate() {
                *m = if k < outer || k + outer > last {
                    0.0
                } else {
                    m.max(0.0)
                };
            }
            moments(&mass, &|_| true)
        }
        PedestalMode::Aperture { half_width_sigmas } => {
            for m in mass.iter_mut() {
                *m = m.max(0.0);
            }
            let mut est = moments(&mass, &|_| true);
            for _ in 0..20 {
                let Some((mu, var)) = est else { break };
                let half = half_width_sigmas * var.sqrt();
                let next = moments(&mass, &|x| (x - mu).abs() <= half);
                if next == est {
                    break;
                }
                est = next;
            }
            est
        }
    }
    .ok_or_else(|| Error::Reconstruction("reconstructed marginal is empty".into()))?;
    Ok((2.0 * var.sqrt(), mu))
}

/// w = 2σ of the marginal recovered from the derivative of a count curve,
/// with σ_w from a Poisson bootstrap of the counts.
pub fn width_from_knife_edge(
    curve: &KnifeEdgeCurve,
    opts: &KnifeEdgeOptions,
) -> Result<KnifeEdgeWidth> {
    let (w, mu) = reconstruct(&curve.positions_um, &curve.counts, opts.pedestal)?;
    if curve.noiseless || opts.bootstrap < 2 {
        return Ok(KnifeEdgeWidth {
            w_um: w,
            sigma_w_um: 0.0,
            centroid_um: mu,
        });
    }
    let b = opts.bootstrap;
    // Resample counts position by position, each from its own stream.
    let draws: Vec<Vec<f64>> = curve
        .counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let mut rng = stream_rng(opts.seed ^ 0x9e37_79b9_7f4a_7c15, k as u64);
            (0..b).map(|_| poisson(&mut rng, c)).collect()
        })
        .collect();
    let widths: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|r| {
            let counts: Vec<f64> = draws.iter().map(|d| d[r]).collect();
            reconstruct(&curve.positions_um, &counts, opts.pedestal).map(|(w, _)| w)
        })
        .collect::<Result<_>>()?;
    let mean = widths.iter().sum::<f64>() / b as f64;
    let var = widths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok(KnifeEdgeWidth {
        w_um: w,
        sigma_w_um: var.sqrt(),
        centroid_um: mu,
    })
}
