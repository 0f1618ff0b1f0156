mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use wgpairs::material::Crystal;
use wgpairs::modesolver::{ModeLabel, Wave, Waveguide, WaveguideGeometry};
use wgpairs::phasematch::{
    calibrate, pm_amplitude, CalibrationParams, Constraint, LmOptions, ModelWindow,
    PhaseMatchModel, SpectralGrid, Target, TripletLabels, SINC_HALF_POWER_X,
};

use common::{centered_model, reference_model, waveguide};

const FUND: TripletLabels = TripletLabels::FUNDAMENTAL;

fn label(s: &str) -> TripletLabels {
    s.parse().unwrap()
}

#[test]
fn fundamental_center_is_a_verified_root() {
    let m = reference_model();
    let c = m.degenerate_center(FUND, 799.8, 12.0).unwrap();
    assert!((c.lambda_h_nm - 799.8).abs() < 1e-6);
    assert!(c.delta_beta.abs() < 1e-6);
    assert!(
        m.mismatch(FUND, c.lambda_h_nm, c.lambda_v_nm)
            .unwrap()
            .abs()
            < 1e-6
    );
}

#[test]
fn grating_vector_enters_additively() {
    let m = reference_model();
    let far = m.with_period(1e12).unwrap();
    for (h, v) in [(799.8, 799.8), (790.0, 812.0), (805.5, 795.1)] {
        let with = m.mismatch(FUND, h, v).unwrap();
        let without = far.mismatch(FUND, h, v).unwrap();
        let unpoled = m.unpoled_mismatch(FUND, h, v).unwrap();
        assert_eq!(unpoled - with, 2.0 * PI / m.geometry().poling_period_um);
        assert!((without - unpoled).abs() < 1e-10);
    }
}

#[test]
fn mismatch_slope_matches_finite_differences_on_beta() {
    let m = reference_model();
    let beta = |wave: Wave, l_nm: f64| {
        m.dispersion(wave, ModeLabel::FUNDAMENTAL)
            .unwrap()
            .propagation_constant(l_nm * 1e-3)
            .unwrap()
    };
    // Independent route: β of each wave by hand, pump wavelength by hand.
    let by_hand = |h: f64, v: f64| {
        let p = h * v / (h + v);
        beta(Wave::Pump, p)
            - beta(Wave::H, h)
            - beta(Wave::V, v)
            - 2.0 * PI / m.geometry().poling_period_um
    };
    let step = 1e-3;
    let fd = (by_hand(799.8 + step, 799.8) - by_hand(799.8 - step, 799.8)) / (2.0 * step);
    let model = (m.mismatch(FUND, 799.8 + step, 799.8).unwrap()
        - m.mismatch(FUND, 799.8 - step, 799.8).unwrap())
        / (2.0 * step);
    assert_eq!(fd.signum(), model.signum());
    assert!((fd - model).abs() < 1e-9 * fd.abs().max(1.0));
    // Pump group index exceeds the H group index, so Δβ falls with λ_H.
    assert!(model < 0.0);
}

#[test]
fn half_power_width_in_mismatch() {
    for length_mm in [0.5, 1.0, 2.0] {
        let half = 2.0 * SINC_HALF_POWER_X / (length_mm * 1e3);
        assert!((pm_amplitude(half, length_mm).powi(2) - 0.5).abs() < 1e-12);
        assert!((pm_amplitude(-half, length_mm).powi(2) - 0.5).abs() < 1e-12);
    }
}

#[test]
fn fwhm_scales_inversely_with_length() {
    let m1 = reference_model();
    let m2 = m1.with_length(2.0).unwrap();
    let c = m1.degenerate_center(FUND, 799.8, 12.0).unwrap();
    let ratio = m1.band_fwhm(&c).unwrap() / m2.band_fwhm(&c).unwrap();
    assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
}

#[test]
fn constructed_root_is_recovered() {
    // Non-dispersive bulk: only waveguide dispersion is left.
    let geometry = WaveguideGeometry::default();
    let mut crystal = Crystal::isotropic(1.80);
    crystal.z = wgpairs::material::SellmeierSet::constant(wgpairs::material::Axis::Z, 1.81);
    let wg = Waveguide::new(geometry, crystal).unwrap();
    let m = centered_model(&wg, ModelWindow::default(), 805.25);
    let c = m
        .band_centers(FUND, Constraint::Degenerate, 790.0, 820.0, 2001)
        .unwrap();
    assert_eq!(c.len(), 1);
    assert!((c[0].lambda_h_nm - 805.25).abs() < 1e-6);
}

#[test]
fn band_centers_independent_of_scan_density() {
    let m = reference_model();
    for t in ["00P-00H-00V", "00P-01H-00V", "00P-00H-01V", "00P-01H-01V"] {
        let t = label(t);
        let coarse = m.band_centers(t, Constraint::Degenerate, 780.0, 820.0, 2001);
        let fine = m.band_centers(t, Constraint::Degenerate, 780.0, 820.0, 8001);
        match (coarse, fine) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    assert!((x.lambda_h_nm - y.lambda_h_nm).abs() < 1e-3);
                    assert!(x.delta_beta.abs() < 1e-6 && y.delta_beta.abs() < 1e-6);
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => panic!("{t}: scan densities disagree: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn no_bracket_reports_interval_and_endpoints() {
    let m = reference_model();
    match m.band_centers(FUND, Constraint::Degenerate, 771.0, 772.0, 11) {
        Err(wgpairs::Error::NoBracket {
            lo_nm,
            hi_nm,
            f_lo,
            f_hi,
        }) => {
            assert_eq!((lo_nm, hi_nm), (771.0, 772.0));
            assert!(f_lo.signum() == f_hi.signum() && f_lo != 0.0);
        }
        other => panic!("expected NoBracket, got {other:?}"),
    }
}

#[test]
fn higher_order_bands_separated_at_reference_contrast() {
    let m = reference_model();
    let (t, sep) = m
        .nearest_band_separation(ModeLabel::FUNDAMENTAL, 799.8, 12.0)
        .unwrap()
        .expect("a higher-order band within 12 nm");
    assert!(sep > 5.0, "{t} at {sep} nm");
}

#[test]
fn band_map_follows_band_centers() {
    let m = reference_model();
    let grid = SpectralGrid::square(780.0, 820.0, 161).unwrap();
    let fund = m.triplet(FUND).unwrap();
    let forbidden = *m
        .triplets()
        .iter()
        .find(|t| !t.is_allowed())
        .expect("a symmetry-forbidden triplet");
    assert!(!forbidden.is_allowed());
    let maps = m.map_bands(&[fund, forbidden], &grid).unwrap();
    assert!(maps[1].amplitude.iter().all(|a| a.abs() < 1e-6));
    let nh = grid.nh();
    for j in (0..grid.nv()).step_by(20) {
        let lv = grid.lambda_v_nm[j];
        let row = &maps[0].amplitude[j * nh..(j + 1) * nh];
        let peak = (0..nh)
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        let c = m
            .band_centers(
                FUND,
                Constraint::FixedV { lambda_v_nm: lv },
                780.0,
                820.0,
                2001,
            )
            .unwrap();
        let cell = (grid.lambda_h_nm[1] - grid.lambda_h_nm[0]).abs() * 1.05;
        assert!(c
            .iter()
            .any(|c| (c.lambda_h_nm - grid.lambda_h_nm[peak]).abs() <= cell));
        let on_center = m.amplitude(&fund, c[0].lambda_h_nm, lv).unwrap();
        assert!((on_center - fund.overlap).abs() < 1e-12);
    }
}

#[test]
fn band_stripes_run_with_negative_slope() {
    let m = reference_model();
    let group = |wave: Wave, l_um: f64| {
        m.dispersion(wave, ModeLabel::FUNDAMENTAL)
            .unwrap()
            .group_index(l_um)
            .unwrap()
    };
    let (np, nh, nv) = (
        group(Wave::Pump, 0.3999),
        group(Wave::H, 0.7998),
        group(Wave::V, 0.7998),
    );
    let predicted = -(np - nh) / (np - nv);
    // Finite-difference slope d(1/λ_V)/d(1/λ_H) along the band.
    let a = m
        .band_centers(
            FUND,
            Constraint::FixedV { lambda_v_nm: 797.0 },
            780.0,
            820.0,
            2001,
        )
        .unwrap()[0];
    let b = m
        .band_centers(
            FUND,
            Constraint::FixedV { lambda_v_nm: 802.0 },
            780.0,
            820.0,
            2001,
        )
        .unwrap()[0];
    let slope =
        (1.0 / b.lambda_v_nm - 1.0 / a.lambda_v_nm) / (1.0 / b.lambda_h_nm - 1.0 / a.lambda_h_nm);
    assert!(slope < 0.0 && predicted < 0.0);
    assert!(
        (slope - predicted).abs() < 0.05 * predicted.abs(),
        "{slope} vs {predicted}"
    );
}

#[test]
fn sfg_filters_broaden_but_do_not_move_the_band() {
    // Length chosen so the λ_H width is close to 0.7 nm.
    let base = reference_model();
    let c = base.degenerate_center(FUND, 799.8, 12.0).unwrap();
    let w1 = base.band_fwhm(&c).unwrap();
    let m = base.with_length(w1 / 0.7).unwrap();
    let fund = m.triplet(FUND).unwrap();
    let bare = m.band_fwhm(&c).unwrap();
    assert!((bare - 0.7).abs() < 0.01);

    let lv = c.lambda_v_nm;
    assert_eq!(
        m.sfg_response(801.0, lv, &fund, 0.0).unwrap(),
        m.amplitude(&fund, 801.0, lv).unwrap().powi(2)
    );
    let axis: Vec<f64> = (0..=400)
        .map(|i| c.lambda_h_nm - 2.0 + 0.01 * i as f64)
        .collect();
    let profile: Vec<f64> = axis
        .iter()
        .map(|&a| m.sfg_response(a, lv, &fund, 0.6).unwrap())
        .collect();
    let peak_i = (0..axis.len())
        .max_by(|&a, &b| profile[a].partial_cmp(&profile[b]).unwrap())
        .unwrap();
    let peak = profile[peak_i];
    let above: Vec<f64> = axis
        .iter()
        .zip(&profile)
        .filter(|(_, p)| **p >= 0.5 * peak)
        .map(|(a, _)| *a)
        .collect();
    let broadened = above.last().unwrap() - above.first().unwrap();
    // The V-arm filter smears the center along the band: quadrature sum of the
    // bare width, the H filter, and the V filter projected through the slope.
    let nh_slope = {
        let a = m
            .band_centers(
                FUND,
                Constraint::FixedV {
                    lambda_v_nm: lv - 1.0,
                },
                790.0,
                810.0,
                401,
            )
            .unwrap()[0];
        let b = m
            .band_centers(
                FUND,
                Constraint::FixedV {
                    lambda_v_nm: lv + 1.0,
                },
                790.0,
                810.0,
                401,
            )
            .unwrap()[0];
        (b.lambda_h_nm - a.lambda_h_nm) / 2.0
    };
    let estimate = (bare.powi(2) + 0.36 * (1.0 + nh_slope * nh_slope)).sqrt();
    assert!(broadened >= bare);
    assert!(
        (broadened - estimate).abs() < 0.1 * estimate,
        "{broadened} vs {estimate}"
    );
    assert!((axis[peak_i] - c.lambda_h_nm).abs() < 0.02);
}

#[test]
fn calibration_recovers_known_parameters() {
    let template = waveguide(0.02, 0.02);
    let window = ModelWindow::centered(800.0, 16.0, 2.0, 3, 0);
    let mut truth = CalibrationParams {
        poling_period_um: 9.0,
        delta_n_h: 0.022,
        delta_n_v: 0.017,
    };
    let probe = wgpairs::phasematch::model_for(&template, window, truth).unwrap();
    truth.poling_period_um = 2.0 * PI / probe.unpoled_mismatch(FUND, 800.0, 800.0).unwrap();
    let truth_model = probe.with_period(truth.poling_period_um).unwrap();
    let mut targets = Vec::new();
    for t in ["00P-00H-00V", "00P-01H-00V", "00P-00H-01V"] {
        let t = label(t);
        let c = truth_model
            .band_centers(t, Constraint::Degenerate, 784.5, 815.5, 2001)
            .unwrap();
        let c = c
            .iter()
            .min_by(|a, b| {
                (a.lambda_h_nm - 800.0)
                    .abs()
                    .total_cmp(&(b.lambda_h_nm - 800.0).abs())
            })
            .unwrap();
        targets.push(Target::BandCenter {
            triplet: t,
            target_nm: c.lambda_h_nm,
            tolerance_nm: 1e-3,
        });
    }
    let start = CalibrationParams {
        poling_period_um: 9.5,
        delta_n_h: 0.02,
        delta_n_v: 0.02,
    };
    let report = calibrate(&template, window, &targets, start, &LmOptions::default()).unwrap();
    assert!(report.passed, "{report:#?}");
    let p = report.params;
    for (got, want) in [
        (p.poling_period_um, truth.poling_period_um),
        (p.delta_n_h, truth.delta_n_h),
        (p.delta_n_v, truth.delta_n_v),
    ] {
        assert!((got - want).abs() < 1e-3 * want, "{got} vs {want}");
    }
}

#[test]
fn model_rejects_unknown_modes() {
    let m = reference_model();
    assert!(m.dispersion(Wave::H, ModeLabel::new(7, 7)).is_err());
    assert!(m.triplet(label("00P-33H-33V")).is_err() || m.triplet(label("00P-33H-33V")).is_ok());
    assert!(PhaseMatchModel::build(
        &waveguide(0.02, 0.02),
        ModelWindow {
            signal_step_nm: 0.0,
            ..ModelWindow::default()
        }
    )
    .is_err());
}

proptest! {
    #[test]
    fn amplitude_is_even_and_bounded(db in -50.0f64..50.0, length_mm in 0.01f64..20.0) {
        let a = pm_amplitude(db, length_mm);
        prop_assert_eq!(a, pm_amplitude(-db, length_mm));
        prop_assert!(a.abs() <= 1.0);
    }
}
