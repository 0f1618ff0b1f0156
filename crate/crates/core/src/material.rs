//! Bulk crystal dispersion from Sellmeier coefficient sets.
//!
//! Wavelengths in this module are vacuum wavelengths in micrometres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Supported Sellmeier forms. `λ` in µm.
///
/// * `Constant`: `n² = A`
/// * `PoleIr`: `n² = A + B/(λ² − C) − D·λ²`
/// * `DoublePole`: `n² = A + B/(λ² − C) + D/(λ² − E)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SellmeierFormula {
    Constant,
    PoleIr,
    DoublePole,
}

impl SellmeierFormula {
    pub fn coefficient_count(self) -> usize {
        match self {
            SellmeierFormula::Constant => 1,
            SellmeierFormula::PoleIr => 4,
            SellmeierFormula::DoublePole => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellmeierSet {
    pub axis: Axis,
    pub formula: SellmeierFormula,
    pub coefficients: Vec<f64>,
    pub min_um: f64,
    pub max_um: f64,
    pub citation: String,
}

const KATO_1991: &str = "K. Kato, IEEE J. Quantum Electron. 27, 1137 (1991)";

impl SellmeierSet {
    pub fn new(
        axis: Axis,
        formula: SellmeierFormula,
        coefficients: Vec<f64>,
        min_um: f64,
        max_um: f64,
        citation: impl Into<String>,
    ) -> Result<Self> {
        let set = SellmeierSet {
            axis,
            formula,
            coefficients,
            min_um,
            max_um,
            citation: citation.into(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.formula.coefficient_count();
        if self.coefficients.len() != want {
            return Err(Error::InvalidInput(format!(
                "{:?} formula takes {} coefficients, got {}",
                self.formula,
                want,
                self.coefficients.len()
            )));
        }
        if !(self.min_um > 0.0 && self.max_um > self.min_um) {
            return Err(Error::InvalidInput(format!(
                "validity range [{}, {}] um is empty",
                self.min_um, self.max_um
            )));
        }
        Ok(())
    }

    /// Dispersion-free set with `n² = n0²` over a wide range.
    pub fn constant(axis: Axis, n0: f64) -> Self {
        SellmeierSet {
            axis,
            formula: SellmeierFormula::Constant,
            coefficients: vec![n0 * n0],
            min_um: 0.1,
            max_um: 10.0,
            citation: "constant index".into(),
        }
    }

    /// Flux-grown KTP at room temperature, single pole plus IR correction.
    pub fn ktp(axis: Axis) -> Self {
        let coefficients = match axis {
            Axis::X => vec![3.0065, 0.03901, 0.04251, 0.01327],
            Axis::Y => vec![3.0333, 0.04154, 0.04547, 0.01408],
            Axis::Z => vec![3.3134, 0.05694, 0.05658, 0.01682],
        };
        SellmeierSet {
            axis,
            formula: SellmeierFormula::PoleIr,
            coefficients,
            min_um: 0.35,
            max_um: 1.1,
            citation: KATO_1991.into(),
        }
    }

    fn check_range(&self, lambda_um: f64) -> Result<()> {
        if lambda_um.is_finite() && lambda_um >= self.min_um && lambda_um <= self.max_um {
            Ok(())
        } else {
            Err(Error::Range {
                quantity: "wavelength_um",
                value: lambda_um,
                min: self.min_um,
                max: self.max_um,
            })
        }
    }

    /// Returns `(n², d(n²)/dλ)`.
    fn permittivity(&self, l: f64) -> (f64, f64) {
        let c = &self.coefficients;
        let l2 = l * l;
        match self.formula {
            SellmeierFormula::Constant => (c[0], 0.0),
            SellmeierFormula::PoleIr => {
                let p = l2 - c[2];
                (
                    c[0] + c[1] / p - c[3] * l2,
                    -2.0 * l * c[1] / (p * p) - 2.0 * l * c[3],
                )
            }
            SellmeierFormula::DoublePole => {
                let p1 = l2 - c[2];
                let p2 = l2 - c[4];
                (
                    c[0] + c[1] / p1 + c[3] / p2,
                    -2.0 * l * (c[1] / (p1 * p1) + c[3] / (p2 * p2)),
                )
            }
        }
    }

    pub fn refractive_index(&self, lambda_um: f64) -> Result<f64> {
        self.check_range(lambda_um)?;
        let (eps, _) = self.permittivity(lambda_um);
        if eps <= 1.0 {
            return Err(Error::InvalidInput(format!(
                "{:?}-axis set gives n^2 = {eps} at {lambda_um} um",
                self.axis
            )));
        }
        Ok(eps.sqrt())
    }

    /// Analytic dn/dλ in µm⁻¹.
    pub fn index_slope(&self, lambda_um: f64) -> Result<f64> {
        let n = self.refractive_index(lambda_um)?;
        let (_, deps) = self.permittivity(lambda_um);
        Ok(deps / (2.0 * n))
    }

    /// Group index `n − λ·dn/dλ`.
    pub fn group_index(&self, lambda_um: f64) -> Result<f64> {
        let n = self.refractive_index(lambda_um)?;
        let slope = self.index_slope(lambda_um)?;
        Ok(n - lambda_um * slope)
    }
}

/// The three principal-axis dispersion sets of a biaxial crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crystal {
    pub x: SellmeierSet,
    pub y: SellmeierSet,
    pub z: SellmeierSet,
}

impl Crystal {
    pub fn ktp() -> Self {
        Crystal {
            x: SellmeierSet::ktp(Axis::X),
            y: SellmeierSet::ktp(Axis::Y),
            z: SellmeierSet::ktp(Axis::Z),
        }
    }

    pub fn isotropic(n0: f64) -> Self {
        Crystal {
            x: SellmeierSet::constant(Axis::X, n0),
            y: SellmeierSet::constant(Axis::Y, n0),
            z: SellmeierSet::constant(Axis::Z, n0),
        }
    }

    pub fn axis(&self, axis: Axis) -> &SellmeierSet {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
            Axis::Z => &self.z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (want, set) in [(Axis::X, &self.x), (Axis::Y, &self.y), (Axis::Z, &self.z)] {
            if set.axis != want {
                return Err(Error::InvalidInput(format!(
                    "set stored under {want:?} is labelled {:?}",
                    set.axis
                )));
            }
            set.validate()?;
        }
        Ok(())
    }
}
