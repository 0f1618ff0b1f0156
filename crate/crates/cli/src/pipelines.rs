//! The subcommands' work. Each pipeline writes its artifacts through an
//! [`Emitter`] and returns a JSON summary plus the lines printed to stdout.

use std::f64::consts::PI;
use std::path::Path;

use serde_json::{json, Value};

use wgpairs::beamlab::{
    caustic_from_planes, fit_m2, heralded_beam, hg_field, iso_planes, iso_sampling_plan, mode_beam,
    BeamAxis, CausticPlane, CausticScan, FieldGrid, M2Fit, MixedBeam, NoiseModel, Relay,
};
use wgpairs::jsa::{
    apply_filter, build_jsa, counting_statistics, detect_islands, heralded_spatial_state, jsi_map,
    HeraldedState, Island, JointSpectrum, SpectralFilter,
};
use wgpairs::modesolver::{Polarization, Wave, Waveguide};
use wgpairs::phasematch::{
    calibrate as fit_parameters, pump_wavelength, BandCenter, LmOptions, PhaseMatchModel,
    SpectralGrid, TripletLabels,
};
use wgpairs::Error;

use crate::config::{BeamSource, Estimator, RunConfig};
use crate::output::{num, Emitter, MapAxis};
use crate::CliError;

pub struct Report {
    pub summary: Value,
    pub lines: Vec<String>,
    /// Nonzero when the pipeline ran but its acceptance check failed.
    pub exit: u8,
}

impl Report {
    fn ok(summary: Value, lines: Vec<String>) -> Self {
        Report {
            summary,
            lines,
            exit: 0,
        }
    }
}

pub fn model(cfg: &RunConfig) -> Result<PhaseMatchModel, CliError> {
    Ok(PhaseMatchModel::build(
        &cfg.waveguide()?,
        cfg.window.window(),
    )?)
}

fn wave_of(p: Polarization) -> Wave {
    match p {
        Polarization::H => Wave::H,
        Polarization::V => Wave::V,
    }
}

fn none_if_no_band<T>(r: wgpairs::Result<T>) -> wgpairs::Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NoBracket { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn modes(cfg: &RunConfig, out: &mut Emitter) -> Result<Report, CliError> {
    let wg = cfg.waveguide()?;
    let mc = &cfg.modes;
    let grid = wg
        .geometry
        .mode_grid_sized(mc.profile_points, mc.profile_points);
    let xs = MapAxis::new("x", "um", (0..grid.nx).map(|i| grid.x(i)).collect());
    let ys = MapAxis::new("depth", "um", (0..grid.ny).map(|j| grid.y(j)).collect());
    let mut rows = Vec::new();
    let mut index = Vec::new();
    for &lambda_nm in &mc.lambda_nm {
        let lambda_um = lambda_nm * 1e-3;
        for wave in [Wave::Pump, Wave::H, Wave::V] {
            for s in wg.mode_solutions_up_to(wave, lambda_um, mc.max_label)? {
                rows.push(vec![
                    wave.to_string(),
                    s.label.i.to_string(),
                    s.label.j.to_string(),
                    num(lambda_um),
                    num(s.n_eff),
                ]);
                let mut entry = json!({
                    "pol": wave.to_string(),
                    "label": s.label.to_string(),
                    "lambda_nm": lambda_nm,
                    "n_eff": s.n_eff,
                });
                if mc.profiles && cfg.output.pgm {
                    let stem = format!("profile_{wave}_{}_{}nm", s.label, num(lambda_nm));
                    let m = wg.sample(wave, lambda_um, s, grid);
                    out.pgm(&stem, "|u|^2 (1/um^2)", &xs, &ys, &m.intensity().data)?;
                    entry["image"] = json!(format!("{stem}.pgm"));
                    entry["sidecar"] = json!(format!("{stem}.json"));
                }
                index.push(entry);
            }
        }
    }
    let count = rows.len();
    out.csv("modes.csv", &["pol", "i", "j", "lambda_um", "n_eff"], rows)?;
    let summary = json!({ "modes": index });
    if mc.profiles && cfg.output.pgm {
        out.json("profiles.json", &summary)?;
    }
    Ok(Report::ok(
        summary,
        vec![format!(
            "{count} guided modes over {} wavelengths",
            mc.lambda_nm.len()
        )],
    ))
}

/// Center and both widths of a band on the degenerate line near `near_nm`.
fn band_entry(
    model: &PhaseMatchModel,
    t: TripletLabels,
    near_nm: f64,
    half_nm: f64,
) -> wgpairs::Result<Value> {
    let c: Option<BandCenter> = none_if_no_band(model.degenerate_center(t, near_nm, half_nm))?;
    let (fwhm, fwhm_deg) = match &c {
        Some(c) => (
            Some(model.band_fwhm(c)?),
            Some(model.band_fwhm_degenerate(c)?),
        ),
        None => (None, None),
    };
    Ok(json!({
        "triplet": t.to_string(),
        "overlap_per_um": model.triplet(t)?.overlap,
        "degenerate_center_nm": c.map(|c| c.lambda_h_nm),
        "fwhm_nm": fwhm,
        "fwhm_degenerate_nm": fwhm_deg,
    }))
}

pub fn bands(cfg: &RunConfig, out: &mut Emitter) -> Result<Report, CliError> {
    let bc = &cfg.bands;
    let model = model(cfg)?;
    let grid = SpectralGrid::square(bc.lo_nm, bc.hi_nm, bc.points)?;
    let allowed: Vec<_> = model
        .triplets_for_pump(bc.pump)
        .into_iter()
        .filter(|t| t.is_allowed())
        .collect();
    let maps = model.map_bands(&allowed, &grid)?;
    let nh = grid.nh();
    let mut total = vec![0.0; grid.len()];
    let mut entries = Vec::new();
    for m in &maps {
        let t = m.triplet.labels;
        let rows = m.amplitude.iter().enumerate().map(|(k, a)| {
            let (lh, lv) = (grid.lambda_h_nm[k % nh], grid.lambda_v_nm[k / nh]);
            vec![num(1e3 / lh), num(1e3 / lv), num(lh), num(lv), num(*a)]
        });
        out.csv(
            &format!("band_{t}.csv"),
            &[
                "inv_lambda_H_per_um",
                "inv_lambda_V_per_um",
                "lambda_H_nm",
                "lambda_V_nm",
                "amplitude",
            ],
            rows,
        )?;
        for (s, a) in total.iter_mut().zip(&m.amplitude) {
            *s += a * a;
        }
        let mut e = band_entry(&model, t, bc.near_nm, bc.half_window_nm)?;
        let summary = model.band_summary(&m.triplet, bc.near_nm, bc.half_window_nm)?;
        e["curve_nm"] = json!(summary.centers);
        entries.push(e);
    }
    let fundamental = band_entry(
        &model,
        TripletLabels::FUNDAMENTAL,
        bc.near_nm,
        bc.half_window_nm,
    )?;
    let separation = model
        .nearest_band_separation(bc.pump, bc.near_nm, bc.half_window_nm)?
        .map(|(t, d)| json!({ "triplet": t.to_string(), "distance_nm": d }));
    if cfg.output.pgm {
        out.pgm(
            "bands",
            "sum of (Gamma sinc)^2 over allowed triplets",
            &MapAxis::new("lambda_H", "nm", grid.lambda_h_nm.clone()),
            &MapAxis::new("lambda_V", "nm", grid.lambda_v_nm.clone()),
            &total,
        )?;
    }
    let summary = json!({
        "pump": bc.pump.to_string(),
        "near_nm": bc.near_nm,
        "fundamental": fundamental,
        "nearest_higher_order": separation,
        "bands": entries,
    });
    out.json("bands.json", &summary)?;
    let mut lines = vec![format!(
        "fundamental center {} nm, FWHM {} nm",
        fmt_opt(&fundamental["degenerate_center_nm"]),
        fmt_opt(&fundamental["fwhm_nm"])
    )];
    lines.push(match &separation {
        Some(s) => format!(
            "nearest higher-order {}P band {} at {:.3} nm",
            bc.pump,
            s["triplet"].as_str().unwrap_or(""),
            s["distance_nm"].as_f64().unwrap_or(f64::NAN)
        ),
        None => format!(
            "no higher-order {}P band within ±{} nm",
            bc.pump, bc.half_window_nm
        ),
    });
    Ok(Report::ok(summary, lines))
}

fn fmt_opt(v: &Value) -> String {
    v.as_f64().map_or("n/a".into(), |x| format!("{x:.4}"))
}

pub fn calibrate(
    cfg: &RunConfig,
    config_path: Option<&Path>,
    force: bool,
    out: &mut Emitter,
) -> Result<Report, CliError> {
    let cc = &cfg.calibration;
    let targets = cc.targets();
    let opts = LmOptions {
        max_iter: cc.max_iter,
        ..LmOptions::default()
    };
    let report = fit_parameters(
        &cfg.waveguide()?,
        targets.window(cc.max_label),
        &targets.targets(),
        cfg.geometry.params(),
        &opts,
    )?;
    out.json("calibration.json", &report)?;
    let mut lines = vec![format!(
        "{:<26} {:>12} {:>12} {:>10} {:>6}",
        "target", "wanted", "achieved", "tolerance", "pass"
    )];
    for r in &report.residuals {
        lines.push(format!(
            "{:<26} {:>12.4} {:>12} {:>10.4} {:>6}",
            r.name,
            r.target,
            r.achieved.map_or("none".into(), |a| format!("{a:.4}")),
            r.tolerance,
            if r.passed { "yes" } else { "NO" }
        ));
    }
    let p = report.params;
    lines.push(format!(
        "period {} um, delta_n_h {}, delta_n_v {} ({} iterations)",
        num(p.poling_period_um),
        num(p.delta_n_h),
        num(p.delta_n_v),
        report.iterations
    ));
    let mut written = None;
    if report.passed || force {
        let mut updated = cfg.clone();
        updated.geometry.poling_period_um = p.poling_period_um;
        updated.geometry.delta_n_h = p.delta_n_h;
        updated.geometry.delta_n_v = p.delta_n_v;
        let text = updated.to_toml();
        out.write("config.toml", text.as_bytes())?;
        if let Some(path) = config_path {
            out.write_external(path, text.as_bytes())?;
            written = Some(path.display().to_string());
        }
        lines.push(match &written {
            Some(p) => format!("updated {p}"),
            None => "calibrated configuration written to config.toml".into(),
        });
    } else {
        lines.push("targets not met; configuration left unchanged (use --force to write)".into());
    }
    let summary = json!({
        "passed": report.passed,
        "params": report.params,
        "residuals": report.residuals,
        "config_updated": written,
    });
    Ok(Report {
        exit: if report.passed { 0 } else { 4 },
        summary,
        lines,
    })
}

pub struct Spectrum {
    pub js: JointSpectrum,
    pub jsi: Vec<f64>,
    pub islands: Vec<Island>,
}

pub fn spectrum(cfg: &RunConfig, model: &PhaseMatchModel) -> Result<Spectrum, CliError> {
    let js = build_jsa(
        model,
        &cfg.pump.excitation()?,
        &cfg.pump.envelope(),
        &cfg.spectrum.grid()?,
    )?;
    let jsi = jsi_map(&js);
    let islands = detect_islands(&jsi, &js.grid, cfg.spectrum.island_threshold)?;
    Ok(Spectrum { js, jsi, islands })
}

/// The configured filter; without a center it sits on the heaviest island.
pub fn herald_filter(cfg: &RunConfig, islands: &[Island]) -> Result<SpectralFilter, CliError> {
    let fc = &cfg.filter;
    let center = match fc.center_nm {
        Some(c) => c,
        None => {
            let top = islands.first().ok_or_else(|| {
                Error::Degenerate("no spectral island to center the filter on".into())
            })?;
            match fc.arm {
                Polarization::H => top.centroid_h_nm,
                Polarization::V => top.centroid_v_nm,
            }
        }
    };
    Ok(fc.filter(center)?)
}

pub fn heralded_state(
    cfg: &RunConfig,
    spec: &Spectrum,
) -> Result<(SpectralFilter, HeraldedState), CliError> {
    let filter = herald_filter(cfg, &spec.islands)?;
    let state =
        heralded_spatial_state(&apply_filter(&spec.js, &filter)?, cfg.filter.heralded_arm())?;
    Ok((filter, state))
}

fn herald_json(
    cfg: &RunConfig,
    filter: &SpectralFilter,
    s: &HeraldedState,
) -> Result<Value, CliError> {
    let n = s.labels.len();
    let part = |f: fn(&num_complex::Complex64) -> f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|r| (0..n).map(|c| f(&s.rho[(r, c)])).collect())
            .collect()
    };
    let (dominant, population) = s.dominant();
    let source = cfg.counting.source(filter.arm)?;
    let rates = counting_statistics(&source)?;
    Ok(json!({
        "filter": filter,
        "heralded_arm": s.arm,
        "labels": s.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        "rho_re": part(|z| z.re),
        "rho_im": part(|z| z.im),
        "purity": s.purity,
        "dominant": { "label": dominant.to_string(), "population": population },
        "eigenvalues": s.eigen().into_iter().map(|(l, _)| l).collect::<Vec<_>>(),
        "counting": {
            "source": source,
            "rates": rates,
            "coincidences_hz": rates.coincidences_hz(),
            "heralding_efficiency": rates.heralding_efficiency(filter.arm),
        },
    }))
}

fn herald_lines(h: &Value) -> Vec<String> {
    vec![
        format!(
            "heralded {} photon: purity {:.5}, dominant {} ({:.5})",
            h["heralded_arm"].as_str().unwrap_or("?"),
            h["purity"].as_f64().unwrap_or(f64::NAN),
            h["dominant"]["label"].as_str().unwrap_or("?"),
            h["dominant"]["population"].as_f64().unwrap_or(f64::NAN)
        ),
        format!(
            "pair rate {:.1} Hz, efficiency {:.5}, coincidences {:.1} Hz",
            h["counting"]["source"]["pair_rate_hz"]
                .as_f64()
                .unwrap_or(f64::NAN),
            h["counting"]["source"]["eta_h"]
                .as_f64()
                .unwrap_or(f64::NAN),
            h["counting"]["coincidences_hz"]
                .as_f64()
                .unwrap_or(f64::NAN)
        ),
    ]
}

pub fn jsa(cfg: &RunConfig, out: &mut Emitter) -> Result<Report, CliError> {
    let model = model(cfg)?;
    let spec = spectrum(cfg, &model)?;
    let g = &spec.js.grid;
    let weights = spec.js.channel_weights();
    let heaviest = weights.iter().copied().fold(0.0, f64::max);
    let mut channels = Vec::new();
    for (c, w) in spec.js.channels.iter().zip(&weights) {
        if !(*w >= cfg.spectrum.channel_floor * heaviest) || *w == 0.0 {
            continue;
        }
        let name = format!("channel_{}H_{}V.csv", c.h, c.v);
        let nh = g.nh();
        let rows = c.amplitude.iter().enumerate().map(|(k, a)| {
            vec![
                num(g.lambda_h_nm[k % nh]),
                num(g.lambda_v_nm[k / nh]),
                num(a.re),
                num(a.im),
            ]
        });
        out.csv(&name, &["lambda_H_nm", "lambda_V_nm", "re", "im"], rows)?;
        channels
            .push(json!({ "h": c.h.to_string(), "v": c.v.to_string(), "weight": w, "file": name }));
    }
    if cfg.output.pgm {
        out.pgm(
            "jsi",
            "joint spectral intensity",
            &MapAxis::new("lambda_H", "nm", g.lambda_h_nm.clone()),
            &MapAxis::new("lambda_V", "nm", g.lambda_v_nm.clone()),
            &spec.jsi,
        )?;
    }
    out.json("islands.json", &spec.islands)?;
    let (filter, state) = heralded_state(cfg, &spec)?;
    let herald = herald_json(cfg, &filter, &state)?;
    out.json("herald.json", &herald)?;
    let mut lines = vec![format!(
        "{} channels written, {} islands",
        channels.len(),
        spec.islands.len()
    )];
    lines.extend(herald_lines(&herald));
    Ok(Report::ok(
        json!({ "channels": channels, "islands": spec.islands, "herald": herald }),
        lines,
    ))
}

pub fn herald(cfg: &RunConfig, out: &mut Emitter) -> Result<Report, CliError> {
    let model = model(cfg)?;
    let spec = spectrum(cfg, &model)?;
    let (filter, state) = heralded_state(cfg, &spec)?;
    let herald = herald_json(cfg, &filter, &state)?;
    out.json("herald.json", &herald)?;
    let lines = herald_lines(&herald);
    Ok(Report::ok(herald, lines))
}

/// z_R of a Gaussian of waist `w_um`, in mm.
pub fn rayleigh_range_mm(w_um: f64, lambda_nm: f64) -> f64 {
    PI * w_um * w_um / (lambda_nm * 1e-3) * 1e-3
}

/// The beam named by the measurement block, at its waist plane z = 0.
pub fn measured_beam(cfg: &RunConfig) -> Result<MixedBeam, CliError> {
    let mc = &cfg.measurement;
    let grid = FieldGrid::square(mc.grid_points, mc.pitch_um);
    let relay_for = |wg: &Waveguide, wave: Wave| -> Result<Relay, CliError> {
        let fundamental = wg
            .mode_solutions_up_to(wave, mc.lambda_nm * 1e-3, 0)?
            .into_iter()
            .next()
            .ok_or_else(|| {
                Error::Degenerate(format!("no guided {wave} mode at {} nm", mc.lambda_nm))
            })?;
        Ok(Relay::fitted(&fundamental, mc.waist_um)?)
    };
    Ok(match mc.source {
        BeamSource::Hg => {
            MixedBeam::single(hg_field(mc.hg_n, mc.hg_m, mc.waist_um, mc.lambda_nm, grid)?)
        }
        BeamSource::Mode => {
            let wg = cfg.waveguide()?;
            let relay = relay_for(&wg, mc.wave)?;
            mode_beam(&wg, mc.wave, mc.mode, mc.lambda_nm, &relay, grid)?
        }
        BeamSource::Heralded => {
            let model = model(cfg)?;
            let spec = spectrum(cfg, &model)?;
            let (_, state) = heralded_state(cfg, &spec)?;
            let wg = cfg.waveguide()?;
            let relay = relay_for(&wg, wave_of(state.arm))?;
            heralded_beam(&wg, &state, mc.lambda_nm, &relay, grid)?
        }
    })
}

/// Exact marginals at ISO-placed planes, one list per axis. The planes are
/// placed around the waist and Rayleigh range of an exact pre-scan.
pub fn caustic_planes_iso(
    beam: &MixedBeam,
    axes: &[BeamAxis],
    waist_um: f64,
    inside: usize,
    outside: usize,
) -> Result<Vec<Vec<CausticPlane>>, CliError> {
    let guess = iso_sampling_plan(
        beam.z_mm(),
        rayleigh_range_mm(waist_um, beam.lambda_nm()),
        inside,
        outside,
    )?;
    axes.iter()
        .map(|&a| Ok(iso_planes(beam, a, &guess, inside, outside)?))
        .collect()
}

/// Widths on every axis under one noise model, merged into one scan.
pub fn scan_planes(
    planes: &[Vec<CausticPlane>],
    lambda_nm: f64,
    noise: &NoiseModel,
) -> Result<CausticScan, CliError> {
    let mut merged: Option<CausticScan> = None;
    for p in planes {
        let s = caustic_from_planes(p, lambda_nm, noise)?;
        match &mut merged {
            None => merged = Some(s),
            Some(m) => {
                m.plan_mm.extend(s.plan_mm);
                m.records.extend(s.records);
            }
        }
    }
    let mut m = merged.ok_or_else(|| Error::Plan("no axes to scan".into()))?;
    m.plan_mm.sort_by(f64::total_cmp);
    m.plan_mm.dedup();
    Ok(m)
}

pub fn noise_model(cfg: &RunConfig) -> NoiseModel {
    match cfg.measurement.estimator {
        Estimator::Moments => NoiseModel::Exact,
        Estimator::KnifeEdge => NoiseModel::KnifeEdge(cfg.measurement.knife_options()),
    }
}

pub fn measure(cfg: &RunConfig) -> Result<(CausticScan, M2Fit), CliError> {
    let mc = &cfg.measurement;
    let beam = measured_beam(cfg)?;
    let planes = caustic_planes_iso(&beam, &mc.axes, mc.waist_um, mc.inside, mc.outside)?;
    let scan = scan_planes(&planes, mc.lambda_nm, &noise_model(cfg))?;
    let fit = fit_m2(&scan)?;
    Ok((scan, fit))
}

pub fn m2(cfg: &RunConfig, out: &mut Emitter) -> Result<Report, CliError> {
    let mc = &cfg.measurement;
    let (scan, fit) = measure(cfg)?;
    out.csv(
        "caustic.csv",
        &["z_mm", "axis", "w_um", "sigma_w_um"],
        scan.records.iter().map(|r| {
            vec![
                num(r.z_mm),
                r.axis.to_string(),
                num(r.w_um),
                num(r.sigma_w_um),
            ]
        }),
    )?;
    let axes: Vec<Value> = fit
        .axes
        .iter()
        .map(|f| {
            json!({
                "axis": f.axis,
                "a_um2": f.a,
                "b_um2_per_mm": f.b,
                "c_um2_per_mm2": f.c,
                "z0_mm": f.z0_mm,
                "w0_um": f.w0_um,
                "z_r_mm": f.z_r_mm,
                "m2": f.m2,
                "sigma_m2": f.sigma_m2,
                "chi2_dof": f.chi2_dof,
                "points": f.points,
                "iso_compliant": f.iso_compliant,
                "covariance": f.covariance,
            })
        })
        .collect();
    let summary = json!({
        "source": mc.source,
        "lambda_nm": mc.lambda_nm,
        "estimator": mc.estimator,
        "noiseless": mc.noiseless,
        "budget": if mc.noiseless { None } else { Some(mc.budget) },
        "seed": scan.seed,
        "axes": axes,
    });
    out.json("m2_fit.json", &summary)?;
    let lines = fit
        .axes
        .iter()
        .map(|f| {
            format!(
                "{}: M² = {:.4} ± {:.4}, w0 = {:.2} um at z0 = {:.3} mm, z_R = {:.3} mm, chi²/dof = {}",
                f.axis,
                f.m2,
                f.sigma_m2,
                f.w0_um,
                f.z0_mm,
                f.z_r_mm,
                f.chi2_dof.map_or("n/a (unweighted)".into(), |c| format!("{c:.3}"))
            )
        })
        .collect();
    Ok(Report::ok(summary, lines))
}

pub fn sfg_map(cfg: &RunConfig, out: &mut Emitter) -> Result<Report, CliError> {
    let sc = &cfg.sfg;
    let model = model(cfg)?;
    let t = model.triplet(sc.triplet)?;
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        (0..sc.points)
            .map(|i| lo + (hi - lo) * i as f64 / (sc.points - 1) as f64)
            .collect()
    };
    let l1 = axis(sc.lambda_1_lo_nm, sc.lambda_1_hi_nm);
    let l2 = axis(sc.lambda_2_lo_nm, sc.lambda_2_hi_nm);
    let map = model.sfg_map(&t, &l1, &l2, sc.filter_fwhm_nm)?;
    let n1 = l1.len();
    out.csv(
        "sfg.csv",
        &["lambda_1_nm", "lambda_2_nm", "power"],
        map.iter()
            .enumerate()
            .map(|(k, p)| vec![num(l1[k % n1]), num(l2[k / n1]), num(*p)]),
    )?;
    if cfg.output.pgm {
        out.pgm(
            "sfg",
            "relative SFG power",
            &MapAxis::new("lambda_1", "nm", l1.clone()),
            &MapAxis::new("lambda_2", "nm", l2.clone()),
            &map,
        )?;
    }
    let k = (0..map.len())
        .max_by(|&a, &b| map[a].total_cmp(&map[b]))
        .unwrap_or(0);
    let (a, b) = (l1[k % n1], l2[k / n1]);
    let summary = json!({
        "triplet": sc.triplet.to_string(),
        "filter_fwhm_nm": sc.filter_fwhm_nm,
        "peak": {
            "lambda_1_nm": a,
            "lambda_2_nm": b,
            "sum_frequency_nm": pump_wavelength(a, b)?,
            "power": map[k],
        },
    });
    out.json("sfg.json", &summary)?;
    let lines = vec![format!(
        "SFG peak at {a:.3} + {b:.3} nm -> {:.4} nm",
        pump_wavelength(a, b)?
    )];
    Ok(Report::ok(summary, lines))
}
