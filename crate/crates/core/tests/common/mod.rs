#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::OnceLock;

use wgpairs::material::Crystal;
use wgpairs::modesolver::{Waveguide, WaveguideGeometry};
use wgpairs::phasematch::{
    model_for, CalibrationParams, ModelWindow, PhaseMatchModel, TripletLabels,
};

pub fn waveguide(delta_n_h: f64, delta_n_v: f64) -> Waveguide {
    let geometry = WaveguideGeometry {
        delta_n_h,
        delta_n_v,
        ..WaveguideGeometry::default()
    };
    Waveguide::new(geometry, Crystal::ktp()).unwrap()
}

/// Model whose period puts the fundamental degenerate band exactly at
/// `center_nm`.
pub fn centered_model(
    waveguide: &Waveguide,
    window: ModelWindow,
    center_nm: f64,
) -> PhaseMatchModel {
    let m = PhaseMatchModel::build(waveguide, window).unwrap();
    let unpoled = m
        .unpoled_mismatch(TripletLabels::FUNDAMENTAL, center_nm, center_nm)
        .unwrap();
    m.with_period(2.0 * PI / unpoled).unwrap()
}

/// Δn = 0.02 on both polarizations, fundamental band at 799.8 nm, window
/// 770–830 nm.
pub fn reference_model() -> &'static PhaseMatchModel {
    static MODEL: OnceLock<PhaseMatchModel> = OnceLock::new();
    MODEL.get_or_init(|| centered_model(&waveguide(0.02, 0.02), ModelWindow::default(), 799.8))
}

/// Best fit of the default calibration targets from (9.0, 0.02, 0.02).
pub const CALIBRATED: CalibrationParams = CalibrationParams {
    poling_period_um: 8.839051618024996,
    delta_n_h: 0.017260230910157482,
    delta_n_v: 0.01775958827047669,
};

/// Default waveguide with the calibrated period and contrasts, window
/// 770–830 nm with labels up to 3.
pub fn calibrated_model() -> &'static PhaseMatchModel {
    static MODEL: OnceLock<PhaseMatchModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let wg = Waveguide::new(WaveguideGeometry::default(), Crystal::ktp()).unwrap();
        model_for(&wg, ModelWindow::default(), CALIBRATED).unwrap()
    })
}
