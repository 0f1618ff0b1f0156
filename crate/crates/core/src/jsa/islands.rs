use serde::Serialize;

use crate::error::{Error, Result};
use crate::phasematch::SpectralGrid;

/// Connected above-threshold region of a joint spectral intensity map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Island {
    pub centroid_h_nm: f64,
    pub centroid_v_nm: f64,
    /// ∬ JSI over the island in the 1/λ variables.
    pub weight: f64,
    pub cells: usize,
    /// Inclusive index bounds (i_lo, i_hi, j_lo, j_hi).
    pub bbox: (usize, usize, usize, usize),
    /// Same bounds in nm: (λ_H lo, λ_H hi, λ_V lo, λ_V hi).
    pub bbox_nm: (f64, f64, f64, f64),
}

/// 4-connected components of cells with `jsi ≥ threshold·max`, heaviest
/// first. An empty or all-zero map yields no islands.
pub fn detect_islands(jsi: &[f64], grid: &SpectralGrid, threshold: f64) -> Result<Vec<Island>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "island threshold {threshold} outside (0, 1)"
        )));
    }
    let (nh, nv) = (grid.nh(), grid.nv());
    if jsi.len() != nh * nv {
        return Err(Error::Shape(format!(
            "intensity map has {} cells, grid {nh}×{nv}",
            jsi.len()
        )));
    }
    let peak = jsi.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(Vec::new());
    }
    let level = threshold * peak;
    let wh = SpectralGrid::inverse_weights(&grid.lambda_h_nm);
    let wv = SpectralGrid::inverse_weights(&grid.lambda_v_nm);

    let mut seen = vec![false; jsi.len()];
    let mut islands = Vec::new();
    let mut stack = Vec::new();
    for start in 0..jsi.len() {
        if seen[start] || jsi[start] < level {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut w, mut sh, mut sv, mut cells) = (0.0, 0.0, 0.0, 0);
        let mut bbox = (usize::MAX, 0, usize::MAX, 0);
        while let Some(k) = stack.pop() {
            let (i, j) = (k % nh, k / nh);
            let m = jsi[k] * wh[i] * wv[j];
            w += m;
            sh += m * grid.lambda_h_nm[i];
            sv += m * grid.lambda_v_nm[j];
            cells += 1;
            bbox = (bbox.0.min(i), bbox.1.max(i), bbox.2.min(j), bbox.3.max(j));
            let mut visit = |n: usize| {
                if !seen[n] && jsi[n] >= level {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                visit(k - 1);
            }
            if i + 1 < nh {
                visit(k + 1);
            }
            if j > 0 {
                visit(k - nh);
            }
            if j + 1 < nv {
                visit(k + nh);
            }
        }
        islands.push(Island {
            centroid_h_nm: sh / w,
            centroid_v_nm: sv / w,
            weight: w,
            cells,
            bbox,
            bbox_nm: (
                grid.lambda_h_nm[bbox.0],
                grid.lambda_h_nm[bbox.1],
                grid.lambda_v_nm[bbox.2],
                grid.lambda_v_nm[bbox.3],
            ),
        });
    }
    islands.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    Ok(islands)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(grid: &SpectralGrid, centers: &[(f64, f64)], sigma: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        for lv in &grid.lambda_v_nm {
            for lh in &grid.lambda_h_nm {
                out.push(
                    centers
                        .iter()
                        .map(|(h, v)| {
                            (-((lh - h).powi(2) + (lv - v).powi(2)) / (2.0 * sigma * sigma)).exp()
                        })
                        .sum(),
                );
            }
        }
        out
    }

    #[test]
    fn single_blob_is_one_island_at_its_peak() {
        let grid = SpectralGrid::square(790.0, 810.0, 201).unwrap();
        let jsi = blobs(&grid, &[(801.3, 797.6)], 0.8);
        let islands = detect_islands(&jsi, &grid, 0.1).unwrap();
        assert_eq!(islands.len(), 1);
        // The 1/λ measure skews the centroid by O(σ²/λ).
        assert!((islands[0].centroid_h_nm - 801.3).abs() < 0.01);
        assert!((islands[0].centroid_v_nm - 797.6).abs() < 0.01);
    }

    #[test]
    fn valley_decides_connectivity() {
        let grid = SpectralGrid::square(790.0, 810.0, 201).unwrap();
        let jsi = blobs(&grid, &[(796.0, 800.0), (804.0, 800.0)], 1.5);
        let split = detect_islands(&jsi, &grid, 0.3).unwrap();
        assert_eq!(split.len(), 2);
        // Valley midway sits at 2·exp(−(4/1.5)²/2) ≈ 0.057 of the peak.
        let merged = detect_islands(&jsi, &grid, 0.05).unwrap();
        assert_eq!(merged.len(), 1);
        assert!((merged[0].centroid_h_nm - 800.0).abs() < 0.05);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        let grid = SpectralGrid::square(790.0, 810.0, 11).unwrap();
        assert!(detect_islands(&vec![0.0; 121], &grid, 0.5)
            .unwrap()
            .is_empty());
        assert!(detect_islands(&vec![1.0; 121], &grid, 1.0).is_err());
        assert!(detect_islands(&vec![1.0; 120], &grid, 0.5).is_err());
    }

    #[test]
    fn islands_sorted_by_weight() {
        let grid = SpectralGrid::square(790.0, 810.0, 201).unwrap();
        let mut jsi = blobs(&grid, &[(795.0, 795.0)], 0.6);
        let big = blobs(&grid, &[(805.0, 805.0)], 1.2);
        for (a, b) in jsi.iter_mut().zip(big) {
            *a += b;
        }
        let islands = detect_islands(&jsi, &grid, 0.2).unwrap();
        assert_eq!(islands.len(), 2);
        assert!(islands[0].centroid_h_nm > 800.0);
        assert!(islands[0].weight > islands[1].weight);
    }
}
