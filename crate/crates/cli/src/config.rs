//! Run configuration: a TOML file whose keys carry their units.
//!
//! Parsing never stops at the first problem. Every missing, unknown, mistyped
//! or out-of-range key is reported with its dotted address.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Serialize, Serializer};
use toml::{Table, Value};

use wgpairs::beamlab::{BeamAxis, KnifeEdgeOptions, PedestalMode};
use wgpairs::jsa::{FilterShape, PairSource, PumpEnvelope, PumpExcitation, SpectralFilter};
use wgpairs::material::{Axis, Crystal, SellmeierFormula, SellmeierSet};
use wgpairs::modesolver::{
    DepthProfile, LateralShape, ModeLabel, Polarization, Wave, Waveguide, WaveguideGeometry,
};
use wgpairs::phasematch::{
    CalibrationParams, CalibrationTargets, ModelWindow, SpectralGrid, TripletLabels,
};

/// The configuration shipped with the binary; carries the calibrated
/// waveguide parameters.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

/// Environment variable naming the configuration file.
pub const CONFIG_ENV: &str = "WGPAIRS_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub struct ConfigErrors {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s)", self.issues.len())?;
        for i in &self.issues {
            write!(f, "\n  {}: {}", i.key, i.message)?;
        }
        Ok(())
    }
}

impl ConfigErrors {
    fn single(key: &str, message: impl Into<String>) -> Self {
        ConfigErrors {
            issues: vec![ConfigIssue {
                key: key.into(),
                message: message.into(),
            }],
        }
    }

    pub fn mentions(&self, key: &str) -> bool {
        self.issues.iter().any(|i| i.key == key)
    }
}

#[derive(Default)]
struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, key: String, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            key,
            message: message.into(),
        });
    }
}

/// One table of the document, with the keys read from it so far.
struct Block<'a> {
    path: String,
    table: Option<&'a Table>,
    used: BTreeSet<String>,
}

impl<'a> Block<'a> {
    fn root(table: &'a Table) -> Self {
        Block {
            path: String::new(),
            table: Some(table),
            used: BTreeSet::new(),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn lookup(&mut self, k: &str) -> Option<&'a Value> {
        self.used.insert(k.to_string());
        self.table.and_then(|t| t.get(k))
    }

    fn opt<T: DeserializeOwned>(&mut self, k: &str, issues: &mut Issues) -> Option<T> {
        let v = self.lookup(k)?;
        match v.clone().try_into::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                issues.push(self.key(k), e.to_string().trim().to_string());
                None
            }
        }
    }

    fn get<T: DeserializeOwned>(&mut self, k: &str, issues: &mut Issues) -> Option<T> {
        if self.table.is_some_and(|t| t.contains_key(k)) {
            self.opt(k, issues)
        } else {
            self.used.insert(k.to_string());
            if self.table.is_some() {
                issues.push(self.key(k), "missing key");
            }
            None
        }
    }

    /// String value parsed with `FromStr`.
    fn parse<T>(&mut self, k: &str, issues: &mut Issues) -> Option<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let s: String = self.get(k, issues)?;
        match s.parse() {
            Ok(x) => Some(x),
            Err(e) => {
                issues.push(self.key(k), e.to_string());
                None
            }
        }
    }

    fn number(
        &mut self,
        k: &str,
        issues: &mut Issues,
        ok: impl Fn(f64) -> bool,
        rule: &str,
    ) -> f64 {
        match self.get::<f64>(k, issues) {
            Some(v) if ok(v) => v,
            Some(v) => {
                issues.push(self.key(k), format!("{v} violates {rule}"));
                f64::NAN
            }
            None => f64::NAN,
        }
    }

    fn positive(&mut self, k: &str, issues: &mut Issues) -> f64 {
        self.number(k, issues, |v| v > 0.0 && v.is_finite(), "> 0")
    }

    fn nonneg(&mut self, k: &str, issues: &mut Issues) -> f64 {
        self.number(k, issues, |v| v >= 0.0 && v.is_finite(), ">= 0")
    }

    fn fraction(&mut self, k: &str, issues: &mut Issues) -> f64 {
        self.number(k, issues, |v| v > 0.0 && v < 1.0, "0 < value < 1")
    }

    fn count(&mut self, k: &str, issues: &mut Issues, min: usize) -> usize {
        match self.get::<usize>(k, issues) {
            Some(v) if v >= min => v,
            Some(v) => {
                issues.push(self.key(k), format!("{v} violates >= {min}"));
                min
            }
            None => min,
        }
    }

    fn child(&mut self, k: &str, issues: &mut Issues) -> Block<'a> {
        let key = self.key(k);
        let table = match self.lookup(k) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                issues.push(key.clone(), "expected a table");
                None
            }
            None => {
                if self.table.is_some() {
                    issues.push(key.clone(), "missing table");
                }
                None
            }
        };
        Block {
            path: key,
            table,
            used: BTreeSet::new(),
        }
    }

    fn finish(self, issues: &mut Issues) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.contains(k) {
                    issues.push(self.key(k), "unknown key");
                }
            }
        }
    }
}

fn display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SellmeierBlock {
    pub formula: SellmeierFormula,
    pub coefficients: Vec<f64>,
    pub min_um: f64,
    pub max_um: f64,
    pub citation: String,
}

impl SellmeierBlock {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let formula = b
            .get::<SellmeierFormula>("formula", issues)
            .unwrap_or(SellmeierFormula::Constant);
        let coefficients: Vec<f64> = b.get("coefficients", issues).unwrap_or_default();
        if b.table.is_some_and(|t| t.contains_key("coefficients"))
            && coefficients.len() != formula.coefficient_count()
        {
            issues.push(
                b.key("coefficients"),
                format!(
                    "{formula:?} takes {} coefficients, got {}",
                    formula.coefficient_count(),
                    coefficients.len()
                ),
            );
        }
        let min_um = b.positive("min_um", issues);
        let max_um = b.positive("max_um", issues);
        if max_um <= min_um {
            issues.push(
                b.key("max_um"),
                format!("{max_um} must exceed min_um = {min_um}"),
            );
        }
        SellmeierBlock {
            formula,
            coefficients,
            min_um,
            max_um,
            citation: b.get("citation", issues).unwrap_or_default(),
        }
    }

    fn set(&self, axis: Axis) -> SellmeierSet {
        SellmeierSet {
            axis,
            formula: self.formula,
            coefficients: self.coefficients.clone(),
            min_um: self.min_um,
            max_um: self.max_um,
            citation: self.citation.clone(),
        }
    }
}

/// One dispersion block per principal axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialConfig {
    pub x: SellmeierBlock,
    pub y: SellmeierBlock,
    pub z: SellmeierBlock,
}

impl MaterialConfig {
    pub fn crystal(&self) -> Crystal {
        Crystal {
            x: self.x.set(Axis::X),
            y: self.y.set(Axis::Y),
            z: self.z.set(Axis::Z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateralKind {
    Step,
    Graded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryConfig {
    pub width_um: f64,
    pub depth_um: f64,
    pub delta_n_h: f64,
    pub delta_n_v: f64,
    pub lateral: LateralKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lateral_edge_um: Option<f64>,
    pub depth_profile: DepthProfile,
    pub length_mm: f64,
    pub poling_period_um: f64,
    pub cover_index: f64,
    pub axis_h: Axis,
    pub axis_v: Axis,
    pub pump_polarization: Polarization,
}

impl GeometryConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let lateral = b.get("lateral", issues).unwrap_or(LateralKind::Step);
        let lateral_edge_um = b.opt::<f64>("lateral_edge_um", issues);
        match (lateral, lateral_edge_um) {
            (LateralKind::Graded, None) => issues.push(
                b.key("lateral_edge_um"),
                "required when lateral = \"graded\"",
            ),
            (LateralKind::Graded, Some(e)) if !(e > 0.0) => {
                issues.push(b.key("lateral_edge_um"), format!("{e} violates > 0"))
            }
            (LateralKind::Step, Some(_)) => issues.push(
                b.key("lateral_edge_um"),
                "only valid with lateral = \"graded\"",
            ),
            _ => {}
        }
        let g = GeometryConfig {
            width_um: b.positive("width_um", issues),
            depth_um: b.positive("depth_um", issues),
            delta_n_h: b.positive("delta_n_h", issues),
            delta_n_v: b.positive("delta_n_v", issues),
            lateral,
            lateral_edge_um,
            depth_profile: b.get("depth_profile", issues).unwrap_or_default(),
            length_mm: b.positive("length_mm", issues),
            poling_period_um: b.positive("poling_period_um", issues),
            cover_index: b.positive("cover_index", issues),
            axis_h: b.get("axis_h", issues).unwrap_or(Axis::Y),
            axis_v: b.get("axis_v", issues).unwrap_or(Axis::Z),
            pump_polarization: b
                .get("pump_polarization", issues)
                .unwrap_or(Polarization::H),
        };
        if g.axis_h == g.axis_v {
            issues.push(
                b.key("axis_v"),
                "H and V must map to different crystal axes",
            );
        }
        g
    }

    pub fn geometry(&self) -> WaveguideGeometry {
        WaveguideGeometry {
            width_um: self.width_um,
            depth_um: self.depth_um,
            delta_n_h: self.delta_n_h,
            delta_n_v: self.delta_n_v,
            lateral: match self.lateral {
                LateralKind::Step => LateralShape::Step,
                LateralKind::Graded => LateralShape::Graded {
                    edge_um: self.lateral_edge_um.unwrap_or(f64::NAN),
                },
            },
            depth_profile: self.depth_profile,
            length_mm: self.length_mm,
            poling_period_um: self.poling_period_um,
            cover_index: self.cover_index,
            axis_h: self.axis_h,
            axis_v: self.axis_v,
            pump_polarization: self.pump_polarization,
        }
    }

    pub fn params(&self) -> CalibrationParams {
        CalibrationParams {
            poling_period_um: self.poling_period_um,
            delta_n_h: self.delta_n_h,
            delta_n_v: self.delta_n_v,
        }
    }
}

/// Sampling of the dispersion tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowConfig {
    pub signal_lo_nm: f64,
    pub signal_hi_nm: f64,
    pub signal_step_nm: f64,
    pub max_label: u8,
    pub pump_max_label: u8,
}

impl WindowConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let w = WindowConfig {
            signal_lo_nm: b.positive("signal_lo_nm", issues),
            signal_hi_nm: b.positive("signal_hi_nm", issues),
            signal_step_nm: b.positive("signal_step_nm", issues),
            max_label: b.get("max_label", issues).unwrap_or(0),
            pump_max_label: b.get("pump_max_label", issues).unwrap_or(0),
        };
        if w.signal_hi_nm <= w.signal_lo_nm {
            issues.push(b.key("signal_hi_nm"), "must exceed signal_lo_nm");
        }
        w
    }

    pub fn window(&self) -> ModelWindow {
        ModelWindow {
            signal_lo_nm: self.signal_lo_nm,
            signal_hi_nm: self.signal_hi_nm,
            signal_step_nm: self.signal_step_nm,
            max_label: self.max_label,
            pump_max_label: self.pump_max_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModesConfig {
    pub lambda_nm: Vec<f64>,
    pub max_label: u8,
    pub profiles: bool,
    pub profile_points: usize,
}

impl ModesConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let lambda_nm: Vec<f64> = b.get("lambda_nm", issues).unwrap_or_default();
        if lambda_nm.iter().any(|l| !(*l > 0.0)) {
            issues.push(b.key("lambda_nm"), "wavelengths must be > 0");
        }
        ModesConfig {
            lambda_nm,
            max_label: b.get("max_label", issues).unwrap_or(0),
            profiles: b.get("profiles", issues).unwrap_or(false),
            profile_points: b.count("profile_points", issues, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PumpMode {
    #[serde(serialize_with = "display")]
    pub label: ModeLabel,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PumpConfig {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    /// Rescale the amplitudes to unit total power.
    pub normalize: bool,
    pub modes: Vec<PumpMode>,
}

impl PumpConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let center_nm = b.positive("center_nm", issues);
        let fwhm_nm = b.positive("fwhm_nm", issues);
        let normalize = b.get("normalize", issues).unwrap_or(true);
        let mut modes = Vec::new();
        match b.get::<Vec<Table>>("modes", issues) {
            Some(list) if list.is_empty() => issues.push(b.key("modes"), "no pump modes"),
            Some(list) => {
                for (k, t) in list.iter().enumerate() {
                    let mut m = Block {
                        path: format!("{}[{k}]", b.key("modes")),
                        table: Some(t),
                        used: BTreeSet::new(),
                    };
                    let label = m.parse::<ModeLabel>("label", issues);
                    let re = m.get::<f64>("re", issues).unwrap_or(0.0);
                    let im = m.get::<f64>("im", issues).unwrap_or(0.0);
                    if !(re.is_finite() && im.is_finite()) {
                        issues.push(m.key("re"), "amplitude must be finite");
                    }
                    m.finish(issues);
                    if let Some(label) = label {
                        if modes.iter().any(|p: &PumpMode| p.label == label) {
                            issues.push(format!("{}[{k}].label", b.key("modes")), "repeated label");
                        }
                        modes.push(PumpMode { label, re, im });
                    }
                }
                if modes.iter().all(|m| m.re == 0.0 && m.im == 0.0) && normalize {
                    issues.push(b.key("modes"), "all amplitudes are zero");
                }
            }
            None => {}
        }
        PumpConfig {
            center_nm,
            fwhm_nm,
            normalize,
            modes,
        }
    }

    pub fn envelope(&self) -> PumpEnvelope {
        PumpEnvelope {
            center_nm: self.center_nm,
            fwhm_nm: self.fwhm_nm,
        }
    }

    pub fn excitation(&self) -> wgpairs::Result<PumpExcitation> {
        let c = self
            .modes
            .iter()
            .map(|m| (m.label, Complex64::new(m.re, m.im)))
            .collect();
        if self.normalize {
            PumpExcitation::normalized(c)
        } else {
            PumpExcitation::unnormalized(c)
        }
    }
}

/// Joint-spectrum grid and island detection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumConfig {
    pub lo_nm: f64,
    pub hi_nm: f64,
    pub points: usize,
    pub island_threshold: f64,
    /// Channels below this fraction of the heaviest are not written out.
    pub channel_floor: f64,
}

impl SpectrumConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let s = SpectrumConfig {
            lo_nm: b.positive("lo_nm", issues),
            hi_nm: b.positive("hi_nm", issues),
            points: b.count("points", issues, 3),
            island_threshold: b.fraction("island_threshold", issues),
            channel_floor: b.fraction("channel_floor", issues),
        };
        if s.hi_nm <= s.lo_nm {
            issues.push(b.key("hi_nm"), "must exceed lo_nm");
        }
        s
    }

    pub fn grid(&self) -> wgpairs::Result<SpectralGrid> {
        SpectralGrid::square(self.lo_nm, self.hi_nm, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterConfig {
    pub arm: Polarization,
    pub shape: FilterShape,
    /// Absent: centered on the heaviest island.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_nm: Option<f64>,
    pub fwhm_nm: f64,
}

impl FilterConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let center_nm = b.opt::<f64>("center_nm", issues);
        if let Some(c) = center_nm {
            if !(c > 0.0 && c.is_finite()) {
                issues.push(b.key("center_nm"), format!("{c} violates > 0"));
            }
        }
        FilterConfig {
            arm: b.get("arm", issues).unwrap_or(Polarization::V),
            shape: b.get("shape", issues).unwrap_or(FilterShape::TopHat),
            center_nm,
            fwhm_nm: b.number("fwhm_nm", issues, |v| v > 0.0, "> 0"),
        }
    }

    pub fn filter(&self, center_nm: f64) -> wgpairs::Result<SpectralFilter> {
        SpectralFilter::new(self.arm, self.shape, center_nm, self.fwhm_nm)
    }

    /// The arm whose photon is heralded by a detection behind the filter.
    pub fn heralded_arm(&self) -> Polarization {
        match self.arm {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationConfig {
    pub degenerate_center_nm: f64,
    pub center_tolerance_nm: f64,
    pub min_separation_nm: f64,
    pub fwhm_nm: f64,
    pub fwhm_tolerance_nm: f64,
    pub fwhm_weight: f64,
    pub max_label: u8,
    pub max_iter: usize,
}

impl CalibrationConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        CalibrationConfig {
            degenerate_center_nm: b.positive("degenerate_center_nm", issues),
            center_tolerance_nm: b.positive("center_tolerance_nm", issues),
            min_separation_nm: b.nonneg("min_separation_nm", issues),
            fwhm_nm: b.positive("fwhm_nm", issues),
            fwhm_tolerance_nm: b.positive("fwhm_tolerance_nm", issues),
            fwhm_weight: b.nonneg("fwhm_weight", issues),
            max_label: b.get("max_label", issues).unwrap_or(0),
            max_iter: b.count("max_iter", issues, 1),
        }
    }

    pub fn targets(&self) -> CalibrationTargets {
        CalibrationTargets {
            degenerate_center_nm: self.degenerate_center_nm,
            center_tolerance_nm: self.center_tolerance_nm,
            min_separation_nm: self.min_separation_nm,
            fwhm_nm: self.fwhm_nm,
            fwhm_tolerance_nm: self.fwhm_tolerance_nm,
            fwhm_weight: self.fwhm_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandsConfig {
    #[serde(serialize_with = "display")]
    pub pump: ModeLabel,
    pub lo_nm: f64,
    pub hi_nm: f64,
    pub points: usize,
    /// Degenerate wavelength around which centers and widths are reported.
    pub near_nm: f64,
    pub half_window_nm: f64,
}

impl BandsConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let s = BandsConfig {
            pump: b.parse("pump", issues).unwrap_or(ModeLabel::FUNDAMENTAL),
            lo_nm: b.positive("lo_nm", issues),
            hi_nm: b.positive("hi_nm", issues),
            points: b.count("points", issues, 3),
            near_nm: b.positive("near_nm", issues),
            half_window_nm: b.positive("half_window_nm", issues),
        };
        if s.hi_nm <= s.lo_nm {
            issues.push(b.key("hi_nm"), "must exceed lo_nm");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamSource {
    /// The heralded photon of the configured pump and filter.
    Heralded,
    /// One guided mode imaged through the relay.
    Mode,
    /// Hermite-Gauss beam of waist `waist_um`.
    Hg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    KnifeEdge,
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PedestalKind {
    OuterTenPercent,
    Aperture,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementConfig {
    pub source: BeamSource,
    pub wave: Wave,
    #[serde(serialize_with = "display")]
    pub mode: ModeLabel,
    pub hg_n: usize,
    pub hg_m: usize,
    pub lambda_nm: f64,
    pub waist_um: f64,
    pub grid_points: usize,
    pub pitch_um: f64,
    pub inside: usize,
    pub outside: usize,
    pub axes: Vec<BeamAxis>,
    pub estimator: Estimator,
    pub noiseless: bool,
    pub budget: f64,
    pub floor: f64,
    pub seed: u64,
    pub bootstrap: usize,
    pub pedestal: PedestalKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aperture_sigmas: Option<f64>,
}

impl MeasurementConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let wave = b.get("wave", issues).unwrap_or(Wave::H);
        if wave == Wave::Pump {
            issues.push(b.key("wave"), "measured beams are H or V");
        }
        let axes: Vec<BeamAxis> = b.get("axes", issues).unwrap_or_default();
        if b.table.is_some_and(|t| t.contains_key("axes")) && axes.is_empty() {
            issues.push(b.key("axes"), "no axes");
        }
        let pedestal = b
            .get("pedestal", issues)
            .unwrap_or(PedestalKind::OuterTenPercent);
        let aperture_sigmas = b.opt::<f64>("aperture_sigmas", issues);
        match (pedestal, aperture_sigmas) {
            (PedestalKind::Aperture, None) => issues.push(
                b.key("aperture_sigmas"),
                "required when pedestal = \"aperture\"",
            ),
            (PedestalKind::Aperture, Some(a)) if !(a > 0.0) => {
                issues.push(b.key("aperture_sigmas"), format!("{a} violates > 0"))
            }
            (PedestalKind::OuterTenPercent, Some(_)) => issues.push(
                b.key("aperture_sigmas"),
                "only valid with pedestal = \"aperture\"",
            ),
            _ => {}
        }
        MeasurementConfig {
            source: b.get("source", issues).unwrap_or(BeamSource::Heralded),
            wave,
            mode: b.parse("mode", issues).unwrap_or(ModeLabel::FUNDAMENTAL),
            hg_n: b.get("hg_n", issues).unwrap_or(0),
            hg_m: b.get("hg_m", issues).unwrap_or(0),
            lambda_nm: b.positive("lambda_nm", issues),
            waist_um: b.positive("waist_um", issues),
            grid_points: b.count("grid_points", issues, 16),
            pitch_um: b.positive("pitch_um", issues),
            inside: b.count("inside", issues, 5),
            outside: b.count("outside", issues, 5),
            axes,
            estimator: b.get("estimator", issues).unwrap_or(Estimator::KnifeEdge),
            noiseless: b.get("noiseless", issues).unwrap_or(false),
            budget: b.positive("budget", issues),
            floor: b.nonneg("floor", issues),
            seed: b.get("seed", issues).unwrap_or(0),
            bootstrap: b.count("bootstrap", issues, 2),
            pedestal,
            aperture_sigmas,
        }
    }

    pub fn knife_options(&self) -> KnifeEdgeOptions {
        KnifeEdgeOptions {
            budget: if self.noiseless {
                f64::INFINITY
            } else {
                self.budget
            },
            floor: self.floor,
            seed: self.seed,
            bootstrap: self.bootstrap,
            pedestal: match self.pedestal {
                PedestalKind::OuterTenPercent => PedestalMode::OuterTenPercent,
                PedestalKind::Aperture => PedestalMode::Aperture {
                    half_width_sigmas: self.aperture_sigmas.unwrap_or(f64::NAN),
                },
            },
        }
    }
}

/// Observed rates the pair source is inferred from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountingConfig {
    pub coincidences_hz: f64,
    pub ratio: f64,
    pub window_ns: f64,
    pub dark_hz: f64,
}

impl CountingConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        CountingConfig {
            coincidences_hz: b.positive("coincidences_hz", issues),
            ratio: b.number("ratio", issues, |v| v > 0.0 && v <= 1.0, "0 < value <= 1"),
            window_ns: b.nonneg("window_ns", issues),
            dark_hz: b.nonneg("dark_hz", issues),
        }
    }

    pub fn source(&self, filtered_arm: Polarization) -> wgpairs::Result<PairSource> {
        wgpairs::jsa::infer_pair_source(
            self.coincidences_hz,
            self.ratio,
            self.window_ns * 1e-9,
            self.dark_hz,
            filtered_arm,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SfgConfig {
    #[serde(serialize_with = "display")]
    pub triplet: TripletLabels,
    pub lambda_1_lo_nm: f64,
    pub lambda_1_hi_nm: f64,
    pub lambda_2_lo_nm: f64,
    pub lambda_2_hi_nm: f64,
    pub points: usize,
    pub filter_fwhm_nm: f64,
}

impl SfgConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let s = SfgConfig {
            triplet: b
                .parse("triplet", issues)
                .unwrap_or(TripletLabels::FUNDAMENTAL),
            lambda_1_lo_nm: b.positive("lambda_1_lo_nm", issues),
            lambda_1_hi_nm: b.positive("lambda_1_hi_nm", issues),
            lambda_2_lo_nm: b.positive("lambda_2_lo_nm", issues),
            lambda_2_hi_nm: b.positive("lambda_2_hi_nm", issues),
            points: b.count("points", issues, 2),
            filter_fwhm_nm: b.nonneg("filter_fwhm_nm", issues),
        };
        if s.lambda_1_hi_nm <= s.lambda_1_lo_nm {
            issues.push(b.key("lambda_1_hi_nm"), "must exceed lambda_1_lo_nm");
        }
        if s.lambda_2_hi_nm <= s.lambda_2_lo_nm {
            issues.push(b.key("lambda_2_hi_nm"), "must exceed lambda_2_lo_nm");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: String,
    pub pgm: bool,
}

impl OutputConfig {
    fn read(b: &mut Block, issues: &mut Issues) -> Self {
        let dir: String = b.get("dir", issues).unwrap_or_default();
        if b.table.is_some_and(|t| t.contains_key("dir")) && dir.is_empty() {
            issues.push(b.key("dir"), "empty path");
        }
        OutputConfig {
            dir,
            pgm: b.get("pgm", issues).unwrap_or(true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub material: MaterialConfig,
    pub geometry: GeometryConfig,
    pub window: WindowConfig,
    pub modes: ModesConfig,
    pub pump: PumpConfig,
    pub spectrum: SpectrumConfig,
    pub filter: FilterConfig,
    pub calibration: CalibrationConfig,
    pub bands: BandsConfig,
    pub measurement: MeasurementConfig,
    pub counting: CountingConfig,
    pub sfg: SfgConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigErrors> {
        let doc: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigErrors::single("<document>", e.message()))?;
        let mut issues = Issues::default();
        let mut root = Block::root(&doc);

        macro_rules! section {
            ($name:literal, $ty:ty) => {{
                let mut b = root.child($name, &mut issues);
                let v = <$ty>::read(&mut b, &mut issues);
                b.finish(&mut issues);
                v
            }};
        }

        let material = {
            let mut m = root.child("material", &mut issues);
            let mut axis = |k: &str, issues: &mut Issues| {
                let mut b = m.child(k, issues);
                let v = SellmeierBlock::read(&mut b, issues);
                b.finish(issues);
                v
            };
            let x = axis("x", &mut issues);
            let y = axis("y", &mut issues);
            let z = axis("z", &mut issues);
            m.finish(&mut issues);
            MaterialConfig { x, y, z }
        };
        let cfg = RunConfig {
            material,
            geometry: section!("geometry", GeometryConfig),
            window: section!("window", WindowConfig),
            modes: section!("modes", ModesConfig),
            pump: section!("pump", PumpConfig),
            spectrum: section!("spectrum", SpectrumConfig),
            filter: section!("filter", FilterConfig),
            calibration: section!("calibration", CalibrationConfig),
            bands: section!("bands", BandsConfig),
            measurement: section!("measurement", MeasurementConfig),
            counting: section!("counting", CountingConfig),
            sfg: section!("sfg", SfgConfig),
            output: section!("output", OutputConfig),
        };
        root.finish(&mut issues);
        if issues.0.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigErrors { issues: issues.0 })
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigErrors> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigErrors::single("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn shipped() -> RunConfig {
        Self::parse(DEFAULT_CONFIG).expect("shipped configuration is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn waveguide(&self) -> wgpairs::Result<Waveguide> {
        Waveguide::new(self.geometry.geometry(), self.material.crystal())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_sections_are_each_reported() {
        let e = RunConfig::parse("").unwrap_err();
        for k in ["material", "geometry", "pump", "output"] {
            assert!(e.mentions(k), "{e}");
        }
    }

    #[test]
    fn syntax_errors_are_reported_as_one_issue() {
        let e = RunConfig::parse("[geometry\nwidth_um = ").unwrap_err();
        assert_eq!(e.issues.len(), 1);
        assert_eq!(e.issues[0].key, "<document>");
    }

    #[test]
    fn knife_options_follow_the_noise_flag() {
        let mut c = RunConfig::shipped();
        c.measurement.noiseless = true;
        assert!(c.measurement.knife_options().is_noiseless());
        c.measurement.noiseless = false;
        assert_eq!(c.measurement.knife_options().budget, c.measurement.budget);
    }
}
