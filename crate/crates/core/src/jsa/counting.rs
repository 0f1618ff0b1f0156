use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modesolver::Polarization;

/// Pair source and detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSource {
    pub pair_rate_hz: f64,
    pub eta_h: f64,
    pub eta_v: f64,
    pub dark_h_hz: f64,
    pub dark_v_hz: f64,
    pub window_s: f64,
    /// Arm whose singles normalize the coincidence-to-singles ratio.
    pub filtered_arm: Polarization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountingRates {
    pub singles_h_hz: f64,
    pub singles_v_hz: f64,
    pub true_coincidences_hz: f64,
    pub accidentals_hz: f64,
    /// (true + accidental) coincidences over the filtered-arm singles.
    pub ratio: f64,
}

impl CountingRates {
    pub fn coincidences_hz(&self) -> f64 {
        self.true_coincidences_hz + self.accidentals_hz
    }

    /// Probability that a detection in the filtered arm has a true partner.
    pub fn heralding_efficiency(&self, filtered_arm: Polarization) -> f64 {
        let s = match filtered_arm {
            Polarization::H => self.singles_h_hz,
            Polarization::V => self.singles_v_hz,
        };
        if s > 0.0 {
            self.true_coincidences_hz / s
        } else {
            0.0
        }
    }
}

impl PairSource {
    fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let rate = |x: f64| x >= 0.0 && x.is_finite();
        if !(unit(self.eta_h)
            && unit(self.eta_v)
            && rate(self.pair_rate_hz)
            && rate(self.dark_h_hz)
            && rate(self.dark_v_hz)
            && rate(self.window_s))
        {
            return Err(Error::InvalidInput(format!("counting parameters {self:?}")));
        }
        Ok(())
    }
}

/// S_i = R·η_i + dark_i, C_true = R·η_H·η_V, C_acc = S_H·S_V·τ.
pub fn counting_statistics(src: &PairSource) -> Result<CountingRates> {
    src.validate()?;
    let sh = src.pair_rate_hz * src.eta_h + src.dark_h_hz;
    let sv = src.pair_rate_hz * src.eta_v + src.dark_v_hz;
    let c_true = src.pair_rate_hz * src.eta_h * src.eta_v;
    let c_acc = sh * sv * src.window_s;
    let s = match src.filtered_arm {
        Polarization::H => sh,
        Polarization::V => sv,
    };
    let ratio = if s > 0.0 { (c_true + c_acc) / s } else { 0.0 };
    Ok(CountingRates {
        singles_h_hz: sh,
        singles_v_hz: sv,
        true_coincidences_hz: c_true,
        accidentals_hz: c_acc,
        ratio,
    })
}

/// Pair rate and common efficiency reproducing an observed coincidence rate
/// and coincidence-to-singles ratio, with equal efficiencies and equal dark
/// rates in both arms.
pub fn infer_pair_source(
    coincidences_hz: f64,
    ratio: f64,
    window_s: f64,
    dark_hz: f64,
    filtered_arm: Polarization,
) -> Result<PairSource> {
    if !(coincidences_hz > 0.0 && ratio > 0.0 && window_s >= 0.0 && dark_hz >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "observations C = {coincidences_hz} Hz, ratio = {ratio}, τ = {window_s} s, dark = {dark_hz} Hz"
        )));
    }
    // Both arms count S; C = ratio·S, R·η² = C − S²τ, R·η = S − dark.
    let s = coincidences_hz / ratio;
    let true_c = coincidences_hz - s * s * window_s;
    let detected = s - dark_hz;
    if !(true_c > 0.0 && detected > 0.0) {
        return Err(Error::InvalidInput(format!(
            "observations leave no true coincidences (S = {s} Hz, C_true = {true_c} Hz)"
        )));
    }
    let eta = true_c / detected;
    if eta > 1.0 {
        return Err(Error::InvalidInput(format!(
            "observations imply efficiency {eta} > 1"
        )));
    }
    Ok(PairSource {
        pair_rate_hz: detected / eta,
        eta_h: eta,
        eta_v: eta,
        dark_h_hz: dark_hz,
        dark_v_hz: dark_hz,
        window_s,
        filtered_arm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(window_s: f64) -> PairSource {
        PairSource {
            pair_rate_hz: 5e5,
            eta_h: 0.16,
            eta_v: 0.16,
            dark_h_hz: 0.0,
            dark_v_hz: 0.0,
            window_s,
            filtered_arm: Polarization::V,
        }
    }

    #[test]
    fn zero_window_has_no_accidentals() {
        let r = counting_statistics(&source(0.0)).unwrap();
        assert_eq!(r.accidentals_hz, 0.0);
        assert!((r.ratio - 0.16).abs() < 1e-15);
    }

    #[test]
    fn accidental_product() {
        let src = PairSource {
            pair_rate_hz: 8e4,
            eta_h: 1.0,
            eta_v: 1.0,
            ..source(6e-9)
        };
        let r = counting_statistics(&src).unwrap();
        assert_eq!((r.singles_h_hz, r.singles_v_hz), (8e4, 8e4));
        assert!((r.accidentals_hz - 38.4).abs() < 1e-9);
    }

    #[test]
    fn inverse_round_trip() {
        for dark in [0.0, 250.0] {
            let src = infer_pair_source(12e3, 0.15, 6e-9, dark, Polarization::V).unwrap();
            let r = counting_statistics(&src).unwrap();
            assert!((r.coincidences_hz() / 12e3 - 1.0).abs() < 1e-12);
            assert!((r.ratio / 0.15 - 1.0).abs() < 1e-12);
        }
        let src = infer_pair_source(12e3, 0.15, 6e-9, 0.0, Polarization::V).unwrap();
        assert!((src.eta_h - 0.14952).abs() < 1e-12);
        assert!((src.pair_rate_hz - 8e4 / 0.14952).abs() < 1e-6);
    }

    #[test]
    fn rejects_unphysical_inputs() {
        assert!(counting_statistics(&PairSource {
            eta_h: 1.5,
            ..source(0.0)
        })
        .is_err());
        assert!(infer_pair_source(12e3, 0.0, 6e-9, 0.0, Polarization::V).is_err());
        assert!(infer_pair_source(12e3, 1.5, 0.0, 0.0, Polarization::V).is_err());
    }
}
