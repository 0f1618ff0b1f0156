mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use wgpairs::beamlab::{
    caustic_planes, fit_m2, hg_field, iso_sampling_plan, knife_edge_positions, knife_edge_scan,
    mixture_caustic, mode_beam, propagate, second_moment_width, second_moment_widths,
    width_from_knife_edge, BeamAxis, FieldGrid, KnifeEdgeOptions, MixedBeam, NoiseModel, Relay,
    TransverseField, KNIFE_POSITIONS, KNIFE_SPAN_SIGMAS,
};
use wgpairs::error::Error;
use wgpairs::modesolver::{ModeLabel, Wave};

use common::{waveguide, CALIBRATED};

const LAMBDA: f64 = 800.0;

fn rayleigh_mm(w0_um: f64) -> f64 {
    PI * w0_um * w0_um / (LAMBDA * 1e-3) * 1e-3
}

fn hg_beam(n: usize, m: usize, w0: f64, grid: FieldGrid) -> MixedBeam {
    MixedBeam::single(hg_field(n, m, w0, LAMBDA, grid).unwrap())
}

fn axes() -> [BeamAxis; 2] {
    [BeamAxis::X, BeamAxis::Y]
}

#[test]
fn gaussian_width_follows_the_hyperbola() {
    let f = hg_field(0, 0, 50.0, LAMBDA, FieldGrid::square(512, 4.0)).unwrap();
    let z_r = rayleigh_mm(50.0);
    for k in -6..=6 {
        let z = 0.5 * k as f64 * z_r;
        let (wx, wy) = second_moment_widths(&propagate(&f, z).unwrap()).unwrap();
        let want = 50.0 * (1.0 + (z / z_r).powi(2)).sqrt();
        assert!((wx / want - 1.0).abs() < 5e-3, "z {z}: {wx} vs {want}");
        assert!((wy / want - 1.0).abs() < 5e-3, "z {z}: {wy} vs {want}");
    }
}

#[test]
fn propagation_is_unitary_and_additive() {
    let f = hg_field(1, 2, 40.0, LAMBDA, FieldGrid::square(256, 4.0)).unwrap();
    let a = propagate(&propagate(&f, 2.5).unwrap(), 4.0).unwrap();
    let b = propagate(&f, 6.5).unwrap();
    assert!((a.power() - 1.0).abs() < 1e-6);
    let err = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    let peak = b.data.iter().map(|x| x.norm()).fold(0.0, f64::max);
    assert!(err < 1e-8 * peak);
}

#[test]
fn lens_focus_matches_gaussian_optics() {
    let (w0, f) = (200.0, 100.0);
    let beam = hg_beam(0, 0, w0, FieldGrid::square(1024, 4.0))
        .thin_lens(f)
        .unwrap();
    let z_r = rayleigh_mm(w0);
    let d = f / (1.0 + (f / z_r).powi(2));
    let z_r_out = (1.0 / z_r) / (1.0 / (f * f) + 1.0 / (z_r * z_r));
    let w_out = (LAMBDA * 1e-3 * z_r_out * 1e3 / PI).sqrt();
    let plan: Vec<f64> = (0..9).map(|k| d + (k as f64 - 4.0) * 5.0).collect();
    let fit = fit_m2(&mixture_caustic(&beam, &plan, &axes(), &NoiseModel::Exact).unwrap()).unwrap();
    for a in &fit.axes {
        assert!((a.z0_mm / d - 1.0).abs() < 0.02, "{a:?} vs {d}");
        assert!((a.w0_um / w_out - 1.0).abs() < 0.02, "{a:?} vs {w_out}");
        assert!((a.m2 - 1.0).abs() < 1e-3);
    }
}

#[test]
fn hermite_gauss_beams_follow_the_odd_integer_law() {
    let grid = FieldGrid::square(640, 4.0);
    let z_r = rayleigh_mm(30.0);
    let plan = iso_sampling_plan(0.0, z_r, 5, 5).unwrap();
    for (n, m) in [(0, 0), (1, 0), (2, 1), (0, 3)] {
        let scan = mixture_caustic(
            &hg_beam(n, m, 30.0, grid),
            &plan,
            &axes(),
            &NoiseModel::Exact,
        )
        .unwrap();
        let fit = fit_m2(&scan).unwrap();
        let (mx, my) = (
            fit.axis(BeamAxis::X).unwrap().m2,
            fit.axis(BeamAxis::Y).unwrap().m2,
        );
        let (ex, ey) = ((2 * n + 1) as f64, (2 * m + 1) as f64);
        assert!((mx / ex - 1.0).abs() < 0.01, "HG{n}{m} x {mx}");
        assert!((my / ey - 1.0).abs() < 0.01, "HG{n}{m} y {my}");
        if (n, m) == (0, 0) {
            assert!((mx - 1.0).abs() < 1e-3 && (my - 1.0).abs() < 1e-3);
        }
        if (n, m) == (1, 0) {
            assert!((mx - 3.0).abs() < 1e-2);
        }
    }
}

#[test]
fn equal_mixture_averages_the_beam_quality() {
    let grid = FieldGrid::square(640, 4.0);
    let fields: Vec<_> = (0..3)
        .map(|n| (hg_field(n, 0, 30.0, LAMBDA, grid).unwrap(), 1.0))
        .collect();
    let beam = MixedBeam::normalized(fields).unwrap();
    let plan = iso_sampling_plan(0.0, rayleigh_mm(30.0), 5, 5).unwrap();
    let fit = fit_m2(&mixture_caustic(&beam, &plan, &axes(), &NoiseModel::Exact).unwrap()).unwrap();
    assert!((fit.axis(BeamAxis::X).unwrap().m2 - 3.0).abs() < 0.05);
    assert!((fit.axis(BeamAxis::Y).unwrap().m2 - 1.0).abs() < 1e-3);
}

#[test]
fn mixture_moments_add_and_single_mixtures_match_their_component() {
    let grid = FieldGrid::square(256, 4.0);
    let a = hg_field(0, 0, 30.0, LAMBDA, grid).unwrap();
    let b = hg_field(1, 1, 30.0, LAMBDA, grid).unwrap();
    let mix = MixedBeam::new(vec![(a.clone(), 0.3), (b.clone(), 0.7)]).unwrap();
    let plan = [-4.0, 0.0, 3.0, 7.0];
    let planes = caustic_planes(&mix, &plan, &axes()).unwrap();
    for p in &planes {
        let var = |f: &TransverseField| {
            let g = propagate(f, p.z_mm).unwrap();
            let coords = g.grid.coords(p.axis);
            let marginal = g.marginal(p.axis);
            let (mu, w) = second_moment_width(&coords, &marginal).unwrap();
            (mu, 0.25 * w * w)
        };
        // Both components are centered, so variances add with the weights.
        let ((_, va), (_, vb)) = (var(&a), var(&b));
        let want = 0.3 * va + 0.7 * vb;
        assert!((0.25 * p.w_um * p.w_um / want - 1.0).abs() < 1e-9);
    }
    let single = mixture_caustic(
        &MixedBeam::single(a.clone()),
        &plan,
        &axes(),
        &NoiseModel::Exact,
    )
    .unwrap();
    for r in &single.records {
        let g = propagate(&a, r.z_mm).unwrap();
        let w = second_moment_width(&g.grid.coords(r.axis), &g.marginal(r.axis))
            .unwrap()
            .1;
        assert!((r.w_um - w).abs() < 1e-9 * w);
    }
}

#[test]
fn any_higher_order_admixture_raises_m2() {
    let grid = FieldGrid::square(512, 4.0);
    let plan = iso_sampling_plan(0.0, rayleigh_mm(30.0), 5, 5).unwrap();
    for eps in [0.01, 0.1, 0.5] {
        let beam = MixedBeam::new(vec![
            (hg_field(0, 0, 30.0, LAMBDA, grid).unwrap(), 1.0 - eps),
            (hg_field(1, 0, 30.0, LAMBDA, grid).unwrap(), eps),
        ])
        .unwrap();
        let fit =
            fit_m2(&mixture_caustic(&beam, &plan, &[BeamAxis::X], &NoiseModel::Exact).unwrap())
                .unwrap();
        let m2 = fit.axes[0].m2;
        assert!(m2 > 1.0, "{eps}: {m2}");
        assert!((m2 - (1.0 + 2.0 * eps)).abs() < 0.01, "{eps}: {m2}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn second_moments_are_quadratic_in_z(
        re in proptest::collection::vec(-1.0f64..1.0, 6),
        im in proptest::collection::vec(-1.0f64..1.0, 6),
    ) {
        let grid = FieldGrid::square(512, 4.0);
        let orders = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];
        let modes: Vec<_> = orders
            .iter()
            .map(|&(n, m)| hg_field(n, m, 40.0, LAMBDA, grid).unwrap())
            .collect();
        let mut data = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (k, f) in modes.iter().enumerate() {
            let c = Complex64::new(re[k], im[k]);
            for (d, a) in data.iter_mut().zip(&f.data) {
                *d += c * a;
            }
        }
        let mut field = TransverseField { grid, data, z_mm: 0.0, lambda_nm: LAMBDA };
        prop_assume!(field.power() > 1e-6);
        field.normalize().unwrap();
        let z_r = rayleigh_mm(40.0);
        let plan: Vec<f64> = (0..9).map(|k| (k as f64 - 4.0) * 0.5 * z_r).collect();
        let scan = mixture_caustic(&MixedBeam::single(field), &plan, &axes(), &NoiseModel::Exact).unwrap();
        for axis in axes() {
            let r = scan.axis_records(axis);
            let z: Vec<f64> = r.iter().map(|r| r.z_mm).collect();
            let v: Vec<f64> = r.iter().map(|r| 0.25 * r.w_um * r.w_um).collect();
            let fit = wgpairs::beamlab::fit_m2_axis(axis, &z, &r.iter().map(|r| r.w_um).collect::<Vec<_>>(), &[0.0; 9], LAMBDA);
            prop_assert!(fit.is_ok());
            let f = fit.unwrap();
            let scale = v.iter().copied().fold(0.0, f64::max);
            for (zk, vk) in z.iter().zip(&v) {
                let model = 0.25 * (f.a + f.b * zk + f.c * zk * zk);
                prop_assert!((model - vk).abs() < 1e-3 * scale, "{axis} z {zk}: {model} vs {vk}");
            }
        }
    }
}

#[test]
fn noiseless_knife_edge_matches_second_moments() {
    let grid = FieldGrid::square(512, 2.0);
    for (n, z) in [(0, 0.0), (1, 0.0), (2, 0.0), (1, 5.0)] {
        let beam = hg_beam(n, 0, 50.0, grid).propagate(z).unwrap();
        let coords = grid.coords(BeamAxis::X);
        let (mu, w) = second_moment_width(&coords, &beam.marginal(BeamAxis::X)).unwrap();
        let opts = KnifeEdgeOptions::noiseless();
        let positions = knife_edge_positions(mu, 0.5 * w, KNIFE_POSITIONS, KNIFE_SPAN_SIGMAS);
        let curve = knife_edge_scan(&beam, BeamAxis::X, &positions, &opts).unwrap();
        let est = width_from_knife_edge(&curve, &opts).unwrap();
        assert!(
            (est.w_um / w - 1.0).abs() < 5e-3,
            "HG{n}0 at {z}: {} vs {w}",
            est.w_um
        );
        assert_eq!(est.sigma_w_um, 0.0);
    }
}

#[test]
fn differentiating_a_noiseless_curve_recovers_the_marginal() {
    let grid = FieldGrid::square(256, 4.0);
    let beam = hg_beam(1, 0, 50.0, grid);
    let positions = knife_edge_positions(0.0, 50.0, 1601, KNIFE_SPAN_SIGMAS);
    let curve = knife_edge_scan(
        &beam,
        BeamAxis::X,
        &positions,
        &KnifeEdgeOptions::noiseless(),
    )
    .unwrap();
    // HG(1,0) with w0 = 50 µm: x² exp(−x²/2s²) / (s³√(2π)), s = 25 µm.
    let s = 25.0f64;
    let density = |x: f64| x * x * (-x * x / (2.0 * s * s)).exp() / (s.powi(3) * (2.0 * PI).sqrt());
    let h = positions[1] - positions[0];
    let l1: f64 = (1..positions.len() - 1)
        .map(|k| {
            let d = (curve.counts[k - 1] - curve.counts[k + 1]) / (2.0 * h);
            (d - density(positions[k])).abs() * h
        })
        .sum();
    assert!(l1 < 1e-3, "{l1}");
}

#[test]
fn edge_limits_and_symmetry() {
    let grid = FieldGrid::square(256, 4.0);
    let beam = hg_beam(0, 0, 50.0, grid);
    let positions = knife_edge_positions(0.0, 25.0, KNIFE_POSITIONS, KNIFE_SPAN_SIGMAS);
    let curve = knife_edge_scan(
        &beam,
        BeamAxis::Y,
        &positions,
        &KnifeEdgeOptions::noiseless(),
    )
    .unwrap();
    assert!((curve.transmission[0] - 1.0).abs() < 1e-4);
    assert!((curve.transmission[20] - 0.5).abs() < 1e-12);
    let noisy = KnifeEdgeOptions {
        seed: 5,
        ..KnifeEdgeOptions::default()
    };
    let curve = knife_edge_scan(&beam, BeamAxis::Y, &positions, &noisy).unwrap();
    assert!((curve.counts[0] - 1e5).abs() < 5.0 * 1e5f64.sqrt());
    let narrow = knife_edge_positions(0.0, 25.0, 41, 1.0);
    assert!(matches!(
        knife_edge_scan(&beam, BeamAxis::Y, &narrow, &noisy),
        Err(Error::Coverage { .. })
    ));
}

fn noisy_width(beam: &MixedBeam, budget: f64, seed: u64) -> (f64, f64) {
    let coords = beam.grid().coords(BeamAxis::X);
    let (mu, w) = second_moment_width(&coords, &beam.marginal(BeamAxis::X)).unwrap();
    let opts = KnifeEdgeOptions {
        budget,
        seed,
        ..KnifeEdgeOptions::default()
    };
    let positions = knife_edge_positions(mu, 0.5 * w, KNIFE_POSITIONS, KNIFE_SPAN_SIGMAS);
    let curve = knife_edge_scan(beam, BeamAxis::X, &positions, &opts).unwrap();
    let est = width_from_knife_edge(&curve, &opts).unwrap();
    (est.w_um, est.sigma_w_um)
}

#[test]
fn counting_noise_stays_within_two_percent() {
    let grid = FieldGrid::square(256, 4.0);
    for n in [0, 1] {
        let beam = hg_beam(n, 0, 50.0, grid);
        let (truth, _) = noisy_width(&beam, f64::INFINITY, 0);
        let errors: Vec<f64> = (0..100)
            .map(|seed| noisy_width(&beam, 1e5, seed).0 / truth - 1.0)
            .collect();
        let inside = errors.iter().filter(|e| e.abs() < 0.02).count();
        let bias = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!(inside >= 95, "HG{n}0: {inside}/100 within 2%");
        assert!(bias.abs() < 1e-2, "HG{n}0: bias {bias}");
    }
}

#[test]
fn halving_the_budget_scales_the_error_by_root_two() {
    let beam = hg_beam(0, 0, 50.0, FieldGrid::square(256, 4.0));
    let mean_sigma = |budget: f64| {
        (0..8)
            .map(|seed| noisy_width(&beam, budget, seed).1)
            .sum::<f64>()
            / 8.0
    };
    let ratio = mean_sigma(5e4) / mean_sigma(1e5);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
}

#[test]
fn seeds_reproduce_count_curves() {
    let beam = hg_beam(1, 0, 50.0, FieldGrid::square(256, 4.0));
    let positions = knife_edge_positions(0.0, 43.3, KNIFE_POSITIONS, KNIFE_SPAN_SIGMAS);
    let scan = |seed| {
        let opts = KnifeEdgeOptions {
            seed,
            ..KnifeEdgeOptions::default()
        };
        knife_edge_scan(&beam, BeamAxis::X, &positions, &opts).unwrap()
    };
    assert_eq!(scan(11).counts, scan(11).counts);
    assert_ne!(scan(11).counts, scan(12).counts);
    let a = noisy_width(&beam, 1e5, 3);
    assert_eq!(a, noisy_width(&beam, 1e5, 3));
}

#[test]
fn noisy_gaussian_caustic_is_consistent_with_unit_quality() {
    let beam = hg_beam(0, 0, 50.0, FieldGrid::square(1024, 4.0));
    let plan = iso_sampling_plan(0.0, rayleigh_mm(50.0), 5, 5).unwrap();
    let planes = caustic_planes(&beam, &plan, &axes()).unwrap();
    for seed in 0..5 {
        let opts = KnifeEdgeOptions {
            seed,
            ..KnifeEdgeOptions::default()
        };
        let scan =
            wgpairs::beamlab::caustic_from_planes(&planes, LAMBDA, &NoiseModel::KnifeEdge(opts))
                .unwrap();
        assert_eq!(scan.seed, Some(seed));
        for a in fit_m2(&scan).unwrap().axes {
            assert!(a.iso_compliant);
            assert!(a.m2 >= 1.0 - 3.0 * a.sigma_m2, "{a:?}");
            assert!((a.m2 - 1.0).abs() < 0.03, "{a:?}");
        }
    }
}

#[test]
fn guided_modes_image_with_their_node_counts() {
    let wg = waveguide(CALIBRATED.delta_n_h, CALIBRATED.delta_n_v);
    let lambda = 799.8;
    let sols = wg.mode_solutions_up_to(Wave::H, lambda * 1e-3, 2).unwrap();
    let relay = Relay::fitted(&sols[0], 50.0).unwrap();
    let grid = FieldGrid::square(256, 4.0);
    for j in 0..3u8 {
        let label = ModeLabel::new(0, j);
        let beam = mode_beam(&wg, Wave::H, label, lambda, &relay, grid).unwrap();
        let f = &beam.components()[0].0;
        assert!((f.power() - 1.0).abs() < 1e-12);
        assert_eq!(wgpairs::beamlab::field_nodes(f), (0, j as usize));
        if j == 0 {
            let (wx, wy) = second_moment_widths(f).unwrap();
            assert!(
                (wx - 50.0).abs() < 0.5 && (wy - 50.0).abs() < 0.5,
                "{wx} {wy}"
            );
        }
    }
    assert!(mode_beam(&wg, Wave::H, ModeLabel::new(1, 0), lambda, &relay, grid).is_err());
}
