use crate::error::{Error, Result};
use crate::grid::RealGrid;

/// Overlap of two constant-phase mode functions reconstructed from intensity
/// maps as `√I`: `∬ √(I_A·I_B) dA`, normalized by `√(∬I_A · ∬I_B)` so that the
/// result lies in `[0, 1]` even for slightly mis-normalized inputs.
pub fn mode_overlap(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    if a.data
        .iter()
        .chain(&b.data)
        .any(|&v| v < 0.0 || !v.is_finite())
    {
        return Err(Error::InvalidInput(
            "intensity maps must be finite and non-negative".into(),
        ));
    }
    let na = a.integrate();
    let nb = b.integrate();
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Degenerate("intensity map integrates to zero".into()));
    }
    let cross = if a.data == b.data {
        na
    } else {
        let prod = RealGrid {
            grid: a.grid,
            data: a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| (x * y).sqrt())
                .collect(),
        };
        prod.integrate()
    };
    Ok((cross / (na.sqrt() * nb.sqrt())).min(1.0))
}

/// Three-wave coupling weight `Γ = ∬ u_P·u_H·u_V dA` (µm⁻¹ for unit-normalized
/// amplitude profiles). Sign is preserved.
pub fn nonlinear_overlap(pump: &RealGrid, h: &RealGrid, v: &RealGrid) -> Result<f64> {
    pump.grid.check_same(&h.grid)?;
    pump.grid.check_same(&v.grid)?;
    let prod = RealGrid {
        grid: pump.grid,
        data: pump
            .data
            .iter()
            .zip(&h.data)
            .zip(&v.data)
            .map(|((p, a), b)| p * a * b)
            .collect(),
    };
    Ok(prod.integrate())
}
