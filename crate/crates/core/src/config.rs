//! Experiment configuration files.
//!
//! A flat, sectioned key-value format with units spelled out in key names:
//!
//! ```text
//! schema_version = 1
//! preset = fig2
//!
//! [drive]
//! ac_amplitude_tesla = 3.75e-11
//! ac_frequency_hz = 700000
//! ```
//!
//! Lines starting with `#` are comments. Values are applied in three layers:
//! built-in defaults, then the named preset (itself a file in this format),
//! then the user's file. Unknown sections and keys are rejected with the line
//! they appear on. Feasibility (Nyquist, analyzer segment length versus
//! duration) is checked here, before any simulation runs.
//!
//! | section | key | default |
//! |---|---|---|
//! | (top) | `schema_version` | required, must be 1 |
//! | (top) | `preset` | none; `fig2`, `fig3`, `fig4` |
//! | chain | `gain` | 12.6 |
//! | chain | `eta_probe`, `eta_conjugate` | from `target_squeezing_db` |
//! | chain | `target_squeezing_db` | −4.7 (sets both transmissions) |
//! | chain | `seed_photon_flux_per_s` | 20 µW at 795 nm ≈ 8.0e13 |
//! | drive | `dc_field_tesla` | 0 |
//! | drive | `ac_amplitude_tesla` | 3.75e-11 |
//! | drive | `ac_frequency_hz` | 700000 |
//! | drive | `phase_rad` | 0 |
//! | scenario | `snl_sensitivity_tesla_per_rthz` | 3.32e-11 (calibrates κ) |
//! | scenario | `rotation_gain_rad_per_tesla` | none; overrides calibration |
//! | scenario | `pbs_sign_probe`, `pbs_sign_conjugate` | +1, −1 |
//! | scenario | `classical_noise_rel_snl` | 0 |
//! | scenario | `light` | `squeezed` (or `shot_noise_reference`) |
//! | scenario | `sample_rate_hz` | 1.5e6 |
//! | scenario | `duration_s` | exactly what the analyzer needs |
//! | scenario | `rng_seed` | 1 |
//! | spectrum | `rbw_hz`, `vbw_hz` | 1, 100 |
//! | spectrum | `trace_averages` | 100 |
//! | spectrum | `window` | `hann` |
//! | spectrum | `center_frequency_hz` | drive frequency |
//! | spectrum | `span_hz` | 200 × rbw |
//! | spectrum | `channel` | `difference` |
//! | sweep | `ac_amplitudes_tesla` (comma list) or `log_start_tesla`, `log_stop_tesla`, `log_points` | none |
//! | outputs | `spectrum_csv`, `report_json`, `sweep_csv`, `traces_csv`, `traces_bin` | none |
//! | metadata | apparatus echo, see [`ApparatusMetadata`] | source values |
//! | provenance | `section.key = free text` | none |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{photon_flux, CODATA};
use crate::signal::{calibrate_rotation_gain, FieldDrive, LightSource, MagnetometerScenario, PbsSign};
use crate::spectral::{SpectrumConfig, Window};
use crate::squeezing::{infer_efficiency, FwmChain};
use crate::traces::Channel;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESET_NAMES: [&str; 3] = ["fig2", "fig3", "fig4"];

pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "fig2" => Some(include_str!("../presets/fig2.conf")),
        "fig3" => Some(include_str!("../presets/fig3.conf")),
        "fig4" => Some(include_str!("../presets/fig4.conf")),
        _ => None,
    }
}

/// Apparatus description echoed into reports. None of it enters the
/// computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApparatusMetadata {
    pub pump_power_w: f64,
    pub probe_power_w: f64,
    pub wavelength_m: f64,
    pub cell_length_m: f64,
    pub temperature_k: f64,
    pub beam_angle_rad: f64,
    pub probe_offset_hz: f64,
    pub conjugate_offset_hz: f64,
    pub dc_residual_max_tesla: f64,
    pub cell_transmission: f64,
}

impl Default for ApparatusMetadata {
    fn default() -> Self {
        Self {
            pump_power_w: 0.3,
            probe_power_w: 20e-6,
            wavelength_m: 795e-9,
            cell_length_m: 0.0254,
            temperature_k: 353.15,
            beam_angle_rad: 7e-3,
            probe_offset_hz: -3.044e9,
            conjugate_offset_hz: 3.044e9,
            dc_residual_max_tesla: 10e-6,
            cell_transmission: 0.86,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub spectrum_csv: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub sweep_csv: Option<PathBuf>,
    pub traces_csv: Option<PathBuf>,
    pub traces_bin: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub scenario: MagnetometerScenario,
    pub spectrum: SpectrumConfig,
    /// Shot-noise-limited sensitivity κ was calibrated to, T/√Hz.
    pub snl_sensitivity_target: Option<f64>,
    /// Squeezing level the transmissions were inferred from, dB.
    pub target_squeezing_db: Option<f64>,
    /// Zero-to-peak drive amplitudes, T, increasing.
    pub sweep: Option<Vec<f64>>,
    pub outputs: Outputs,
    pub metadata: ApparatusMetadata,
    /// `section.key` → source annotation.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed but uninterpreted file: section → key → value.
#[derive(Debug, Clone, Default)]
struct Document {
    entries: BTreeMap<(String, String), Entry>,
}

const SECTIONS: [&str; 8] = [
    "", "chain", "drive", "scenario", "spectrum", "sweep", "outputs", "metadata",
];

fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "" => &["schema_version", "preset"],
        "chain" => &["gain", "eta_probe", "eta_conjugate", "target_squeezing_db", "seed_photon_flux_per_s"],
        "drive" => &["dc_field_tesla", "ac_amplitude_tesla", "ac_frequency_hz", "phase_rad"],
        "scenario" => &[
            "snl_sensitivity_tesla_per_rthz",
            "rotation_gain_rad_per_tesla",
            "pbs_sign_probe",
            "pbs_sign_conjugate",
            "classical_noise_rel_snl",
            "light",
            "sample_rate_hz",
            "duration_s",
            "rng_seed",
        ],
        "spectrum" => &[
            "rbw_hz",
            "vbw_hz",
            "trace_averages",
            "window",
            "center_frequency_hz",
            "span_hz",
            "channel",
        ],
        "sweep" => &["ac_amplitudes_tesla", "log_start_tesla", "log_stop_tesla", "log_points"],
        "outputs" => &["spectrum_csv", "report_json", "sweep_csv", "traces_csv", "traces_bin"],
        "metadata" => &[
            "pump_power_w",
            "probe_power_w",
            "wavelength_m",
            "cell_length_m",
            "temperature_k",
            "beam_angle_rad",
            "probe_offset_hz",
            "conjugate_offset_hz",
            "dc_residual_max_tesla",
            "cell_transmission",
        ],
        _ => &[],
    }
}

type Annotations = BTreeMap<String, (String, usize)>;

fn parse_document(text: &str) -> Result<(Document, Annotations)> {
    let mut doc = Document::default();
    let mut provenance = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(Some(line_no), "unterminated section header"))?
                .trim();
            if name != "provenance" && (name.is_empty() || !SECTIONS.contains(&name)) {
                return Err(Error::config(Some(line_no), format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line_no), "expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::config(Some(line_no), "empty key"));
        }
        if section == "provenance" {
            let (s, k) = key.split_once('.').ok_or_else(|| {
                Error::config(Some(line_no), format!("provenance key '{key}' must be section.key"))
            })?;
            if !SECTIONS.contains(&s) || !known_keys(s).contains(&k) {
                return Err(Error::config(
                    Some(line_no),
                    format!("provenance refers to unknown key '{key}'"),
                ));
            }
            provenance.insert(key.to_string(), (value.to_string(), line_no));
            continue;
        }
        if !known_keys(&section).contains(&key) {
            let where_ = if section.is_empty() { "top level".to_string() } else { format!("[{section}]") };
            return Err(Error::config(Some(line_no), format!("unknown key '{key}' in {where_}")));
        }
        let slot = (section.clone(), key.to_string());
        if let Some(prev) = doc.entries.get(&slot) {
            return Err(Error::config(
                Some(line_no),
                format!("duplicate key '{key}' (first set on line {})", prev.line),
            ));
        }
        doc.entries.insert(
            slot,
            Entry {
                value: value.to_string(),
                line: line_no,
            },
        );
    }
    Ok((doc, provenance))
}

impl Document {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn f64(&self, section: &str, key: &str) -> Result<Option<(f64, usize)>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => {
                let v: f64 = e.value.parse().map_err(|_| {
                    Error::config(Some(e.line), format!("{key}: '{}' is not a number", e.value))
                })?;
                if !v.is_finite() {
                    return Err(Error::config(Some(e.line), format!("{key} must be finite")));
                }
                Ok(Some((v, e.line)))
            }
        }
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str, what: &str) -> Result<Option<(T, usize)>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(|v| Some((v, e.line))).map_err(|_| {
                Error::config(Some(e.line), format!("{key}: '{}' is not {what}", e.value))
            }),
        }
    }

    fn string(&self, section: &str, key: &str) -> Option<(String, usize)> {
        self.get(section, key).map(|e| (e.value.clone(), e.line))
    }
}

/// Line where a layer set a value, for cross-field error messages.
type Origin = Option<usize>;

#[derive(Debug, Clone)]
struct Builder {
    gain: f64,
    eta: Option<(f64, f64)>,
    target_squeezing_db: Option<f64>,
    seed_flux: f64,
    drive: FieldDrive,
    snl_target: Option<f64>,
    rotation_gain: Option<f64>,
    sign_p: PbsSign,
    sign_c: PbsSign,
    classical: f64,
    light: LightSource,
    sample_rate: f64,
    duration: Option<(f64, Origin)>,
    seed: u64,
    rbw: (f64, Origin),
    vbw: f64,
    averages: usize,
    window: Window,
    center: Option<f64>,
    span: Option<f64>,
    channel: Channel,
    sweep: Option<(Vec<f64>, Origin)>,
    outputs: Outputs,
    metadata: ApparatusMetadata,
    provenance: BTreeMap<String, String>,
    eta_line: Origin,
    chain_line: Origin,
}

impl Default for Builder {
    fn default() -> Self {
        let meta = ApparatusMetadata::default();
        Self {
            gain: 12.6,
            eta: None,
            target_squeezing_db: Some(-4.7),
            seed_flux: photon_flux(meta.probe_power_w, meta.wavelength_m, &CODATA)
                .expect("default probe power is valid"),
            drive: FieldDrive::ac(37.5e-12, 700e3),
            snl_target: Some(33.2e-12),
            rotation_gain: None,
            sign_p: PbsSign::Plus,
            sign_c: PbsSign::Minus,
            classical: 0.0,
            light: LightSource::Squeezed,
            sample_rate: 1.5e6,
            duration: None,
            seed: 1,
            rbw: (1.0, None),
            vbw: 100.0,
            averages: 100,
            window: Window::Hann,
            center: None,
            span: None,
            channel: Channel::Difference,
            sweep: None,
            outputs: Outputs::default(),
            metadata: meta,
            provenance: BTreeMap::new(),
            eta_line: None,
            chain_line: None,
        }
    }
}

fn parse_sign(v: &str, line: usize) -> Result<PbsSign> {
    match v {
        "+1" | "1" => Ok(PbsSign::Plus),
        "-1" => Ok(PbsSign::Minus),
        other => Err(Error::config(Some(line), format!("splitter sign must be +1 or -1, got '{other}'"))),
    }
}

impl Builder {
    fn apply(&mut self, doc: &Document, provenance: Annotations) -> Result<()> {
        if let Some((v, l)) = doc.f64("chain", "gain")? {
            self.gain = v;
            self.chain_line = Some(l);
        }
        let ep = doc.f64("chain", "eta_probe")?;
        let ec = doc.f64("chain", "eta_conjugate")?;
        let target = doc.f64("chain", "target_squeezing_db")?;
        if let Some((t, l)) = target {
            if let Some((_, l2)) = ep.or(ec) {
                return Err(Error::config(
                    Some(l.max(l2)),
                    "target_squeezing_db and explicit eta_* are mutually exclusive",
                ));
            }
            self.target_squeezing_db = Some(t);
            self.eta = None;
            self.eta_line = Some(l);
        }
        if ep.is_some() || ec.is_some() {
            let (old_p, old_c) = self.eta.unwrap_or((1.0, 1.0));
            let p = ep.map(|x| x.0).unwrap_or(old_p);
            let c = ec.map(|x| x.0).unwrap_or(old_c);
            for (name, v) in [("eta_probe", ep), ("eta_conjugate", ec)] {
                if let Some((x, l)) = v {
                    if !(0.0..=1.0).contains(&x) {
                        return Err(Error::config(Some(l), format!("{name} must lie in [0, 1], got {x}")));
                    }
                }
            }
            self.eta = Some((p, c));
            self.target_squeezing_db = None;
            self.eta_line = ep.or(ec).map(|x| x.1);
        }
        if let Some((v, l)) = doc.f64("chain", "seed_photon_flux_per_s")? {
            if !(v > 0.0) {
                return Err(Error::config(Some(l), format!("seed_photon_flux_per_s must be > 0, got {v}")));
            }
            self.seed_flux = v;
        }

        if let Some((v, _)) = doc.f64("drive", "dc_field_tesla")? {
            self.drive.dc_field = v;
        }
        if let Some((v, l)) = doc.f64("drive", "ac_amplitude_tesla")? {
            if v < 0.0 {
                return Err(Error::config(Some(l), format!("ac_amplitude_tesla must be >= 0, got {v}")));
            }
            self.drive.ac_amplitude = v;
        }
        if let Some((v, l)) = doc.f64("drive", "ac_frequency_hz")? {
            if v < 0.0 {
                return Err(Error::config(Some(l), format!("ac_frequency_hz must be >= 0, got {v}")));
            }
            self.drive.ac_frequency = v;
        }
        if let Some((v, _)) = doc.f64("drive", "phase_rad")? {
            self.drive.phase = v;
        }

        let snl = doc.f64("scenario", "snl_sensitivity_tesla_per_rthz")?;
        let kappa = doc.f64("scenario", "rotation_gain_rad_per_tesla")?;
        if let (Some((_, a)), Some((_, b))) = (snl, kappa) {
            return Err(Error::config(
                Some(a.max(b)),
                "snl_sensitivity_tesla_per_rthz and rotation_gain_rad_per_tesla are mutually exclusive",
            ));
        }
        if let Some((v, l)) = snl {
            if !(v > 0.0) {
                return Err(Error::config(Some(l), format!("snl_sensitivity_tesla_per_rthz must be > 0, got {v}")));
            }
            self.snl_target = Some(v);
            self.rotation_gain = None;
        }
        if let Some((v, l)) = kappa {
            if v < 0.0 {
                return Err(Error::config(Some(l), format!("rotation_gain_rad_per_tesla must be >= 0, got {v}")));
            }
            self.rotation_gain = Some(v);
            self.snl_target = None;
        }
        if let Some((v, l)) = doc.string("scenario", "pbs_sign_probe") {
            self.sign_p = parse_sign(&v, l)?;
        }
        if let Some((v, l)) = doc.string("scenario", "pbs_sign_conjugate") {
            self.sign_c = parse_sign(&v, l)?;
        }
        if let Some((v, l)) = doc.f64("scenario", "classical_noise_rel_snl")? {
            if v < 0.0 {
                return Err(Error::config(Some(l), format!("classical_noise_rel_snl must be >= 0, got {v}")));
            }
            self.classical = v;
        }
        if let Some((v, l)) = doc.string("scenario", "light") {
            self.light = match v.as_str() {
                "squeezed" => LightSource::Squeezed,
                "shot_noise_reference" => LightSource::ShotNoiseReference,
                other => {
                    return Err(Error::config(
                        Some(l),
                        format!("light must be squeezed or shot_noise_reference, got '{other}'"),
                    ))
                }
            };
        }
        if let Some((v, l)) = doc.f64("scenario", "sample_rate_hz")? {
            if !(v > 0.0) {
                return Err(Error::config(Some(l), format!("sample_rate_hz must be > 0, got {v}")));
            }
            self.sample_rate = v;
        }
        if let Some((v, l)) = doc.f64("scenario", "duration_s")? {
            if !(v > 0.0) {
                return Err(Error::config(Some(l), format!("duration_s must be > 0, got {v}")));
            }
            self.duration = Some((v, Some(l)));
        }
        if let Some((v, _)) = doc.parsed::<u64>("scenario", "rng_seed", "an unsigned integer")? {
            self.seed = v;
        }

        if let Some((v, l)) = doc.f64("spectrum", "rbw_hz")? {
            if !(v > 0.0) {
                return Err(Error::config(Some(l), format!("rbw_hz must be > 0, got {v}")));
            }
            self.rbw = (v, Some(l));
        }
        if let Some((v, l)) = doc.f64("spectrum", "vbw_hz")? {
            if !(v > 0.0) {
                return Err(Error::config(Some(l), format!("vbw_hz must be > 0, got {v}")));
            }
            self.vbw = v;
        }
        if let Some((v, l)) = doc.parsed::<usize>("spectrum", "trace_averages", "a positive integer")? {
            if v == 0 {
                return Err(Error::config(Some(l), "trace_averages must be >= 1"));
            }
            self.averages = v;
        }
        if let Some((v, l)) = doc.string("spectrum", "window") {
            self.window = v.parse().map_err(|e: String| Error::config(Some(l), e))?;
        }
        if let Some((v, l)) = doc.f64("spectrum", "center_frequency_hz")? {
            if v < 0.0 {
                return Err(Error::config(Some(l), format!("center_frequency_hz must be >= 0, got {v}")));
            }
            self.center = Some(v);
        }
        if let Some((v, l)) = doc.f64("spectrum", "span_hz")? {
            if !(v > 0.0) {
                return Err(Error::config(Some(l), format!("span_hz must be > 0, got {v}")));
            }
            self.span = Some(v);
        }
        if let Some((v, l)) = doc.string("spectrum", "channel") {
            self.channel = v.parse().map_err(|e: String| Error::config(Some(l), e))?;
        }

        self.apply_sweep(doc)?;

        for key in known_keys("outputs") {
            if let Some((v, l)) = doc.string("outputs", key) {
                if v.is_empty() {
                    return Err(Error::config(Some(l), format!("{key} must not be empty")));
                }
                let p = Some(PathBuf::from(v));
                match *key {
                    "spectrum_csv" => self.outputs.spectrum_csv = p,
                    "report_json" => self.outputs.report_json = p,
                    "sweep_csv" => self.outputs.sweep_csv = p,
                    "traces_csv" => self.outputs.traces_csv = p,
                    _ => self.outputs.traces_bin = p,
                }
            }
        }

        let m = &mut self.metadata;
        for (key, slot) in [
            ("pump_power_w", &mut m.pump_power_w),
            ("probe_power_w", &mut m.probe_power_w),
            ("wavelength_m", &mut m.wavelength_m),
            ("cell_length_m", &mut m.cell_length_m),
            ("temperature_k", &mut m.temperature_k),
            ("beam_angle_rad", &mut m.beam_angle_rad),
            ("probe_offset_hz", &mut m.probe_offset_hz),
            ("conjugate_offset_hz", &mut m.conjugate_offset_hz),
            ("dc_residual_max_tesla", &mut m.dc_residual_max_tesla),
            ("cell_transmission", &mut m.cell_transmission),
        ] {
            if let Some((v, _)) = doc.f64("metadata", key)? {
                *slot = v;
            }
        }

        for (k, (v, _)) in provenance {
            self.provenance.insert(k, v);
        }
        Ok(())
    }

    fn apply_sweep(&mut self, doc: &Document) -> Result<()> {
        let list = doc.string("sweep", "ac_amplitudes_tesla");
        let start = doc.f64("sweep", "log_start_tesla")?;
        let stop = doc.f64("sweep", "log_stop_tesla")?;
        let points = doc.parsed::<usize>("sweep", "log_points", "a positive integer")?;
        let any_log = start.is_some() || stop.is_some() || points.is_some();
        if let Some((text, line)) = list {
            if any_log {
                return Err(Error::config(Some(line), "give either ac_amplitudes_tesla or a log range, not both"));
            }
            let mut values = Vec::new();
            for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let v: f64 = part
                    .parse()
                    .map_err(|_| Error::config(Some(line), format!("sweep amplitude '{part}' is not a number")))?;
                values.push(v);
            }
            self.sweep = Some((values, Some(line)));
        } else if any_log {
            let line = [start.map(|x| x.1), stop.map(|x| x.1), points.map(|x| x.1)]
                .into_iter()
                .flatten()
                .max();
            let (Some((a, _)), Some((b, _)), Some((n, _))) = (start, stop, points) else {
                return Err(Error::config(line, "log sweep needs log_start_tesla, log_stop_tesla and log_points"));
            };
            if !(a > 0.0 && b > a) || n < 2 {
                return Err(Error::config(
                    line,
                    format!("log sweep needs 0 < start < stop and >= 2 points, got {a}, {b}, {n}"),
                ));
            }
            let values = (0..n)
                .map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64))
                .collect();
            self.sweep = Some((values, line));
        }
        Ok(())
    }

    fn finish(self, preset: Option<String>) -> Result<ExperimentConfig> {
        let (eta_p, eta_c) = match (self.eta, self.target_squeezing_db) {
            (Some(e), _) => e,
            (None, Some(db)) => {
                let e = infer_efficiency(db, self.gain)
                    .map_err(|e| Error::config(self.eta_line.or(self.chain_line), e.to_string()))?;
                (e, e)
            }
            (None, None) => (1.0, 1.0),
        };
        let chain = FwmChain::new(self.gain, eta_p, eta_c, self.seed_flux)
            .map_err(|e| Error::config(self.chain_line.or(self.eta_line), e.to_string()))?;

        let center = self.center.unwrap_or(self.drive.ac_frequency);
        let spectrum = SpectrumConfig {
            rbw: self.rbw.0,
            vbw: self.vbw,
            trace_averages: self.averages,
            window: self.window,
            center_frequency: center,
            span: self.span.unwrap_or(200.0 * self.rbw.0),
            channel: self.channel,
        };
        let infeasible = |msg: String| Error::Configuration(msg);
        if self.sample_rate <= 2.0 * self.drive.ac_frequency {
            return Err(infeasible(format!(
                "sample_rate_hz {} must exceed twice ac_frequency_hz {}",
                self.sample_rate, self.drive.ac_frequency
            )));
        }
        let needed_samples = spectrum.samples_required(self.sample_rate)?;
        let needed = needed_samples as f64 / self.sample_rate;
        let duration = match self.duration {
            None => needed,
            Some((d, line)) => {
                let seg = spectrum.segment_len(self.sample_rate)? as f64 / self.sample_rate;
                if d * self.sample_rate + 1e-6 < needed_samples as f64 {
                    let where_ = line.map(|l| format!(" (line {l})")).unwrap_or_default();
                    return Err(infeasible(format!(
                        "rbw_hz {} needs {} segments of {seg} s = {needed} s of data, but duration_s is {d}{where_}",
                        self.rbw.0,
                        spectrum.segments_required()
                    )));
                }
                d
            }
        };

        let sweep = match self.sweep {
            None => None,
            Some((values, line)) => {
                if values.is_empty() {
                    return Err(Error::config(line, "sweep amplitude list is empty"));
                }
                if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::config(line, "sweep amplitudes must be positive"));
                }
                if values.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config(line, "sweep amplitudes must be strictly increasing"));
                }
                Some(values)
            }
        };

        let mut scenario = MagnetometerScenario {
            chain,
            drive: self.drive,
            rotation_gain: self.rotation_gain.unwrap_or(0.0),
            pbs_sign_probe: self.sign_p,
            pbs_sign_conjugate: self.sign_c,
            classical_noise_rel_snl: self.classical,
            light: self.light,
            sample_rate: self.sample_rate,
            duration,
            rng_seed: self.seed,
        };
        scenario.validate()?;
        if let Some(target) = self.snl_target {
            // calibrate against the strongest field the run will apply
            let mut probe = scenario.clone();
            if let Some(s) = &sweep {
                probe.drive.ac_amplitude = probe.drive.ac_amplitude.max(*s.last().unwrap());
            }
            scenario.rotation_gain = calibrate_rotation_gain(target, &probe)?;
        }
        Ok(ExperimentConfig {
            preset,
            scenario,
            spectrum,
            snl_sensitivity_target: self.snl_target,
            target_squeezing_db: if self.eta.is_none() { self.target_squeezing_db } else { None },
            sweep,
            outputs: self.outputs,
            metadata: self.metadata,
            provenance: self.provenance,
        })
    }
}

/// Parses configuration text. `origin` only labels error messages.
pub fn parse_config_str(text: &str, origin: Option<&Path>) -> Result<ExperimentConfig> {
    let label = |e: Error| match origin {
        Some(p) => e.with_path(p),
        None => e,
    };
    let (doc, provenance) = parse_document(text).map_err(label)?;
    let version = doc
        .parsed::<u32>("", "schema_version", "an integer")
        .map_err(label)?
        .ok_or_else(|| label(Error::config(None, "missing schema_version")))?;
    if version.0 != SCHEMA_VERSION {
        return Err(label(Error::config(
            Some(version.1),
            format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", version.0),
        )));
    }
    let mut builder = Builder::default();
    let preset = doc.string("", "preset");
    if let Some((name, line)) = &preset {
        let text = preset_text(name).ok_or_else(|| {
            label(Error::config(
                Some(*line),
                format!("unknown preset '{name}' (expected one of {})", PRESET_NAMES.join(", ")),
            ))
        })?;
        let (pdoc, pprov) = parse_document(text)?;
        if pdoc.get("", "preset").is_some() {
            return Err(Error::config(None, format!("preset {name} must not name another preset")));
        }
        builder.apply(&pdoc, pprov)?;
    }
    builder.apply(&doc, provenance).map_err(label)?;
    builder.finish(preset.map(|p| p.0)).map_err(label)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, Some(path))
}

/// Configuration of a built-in preset with everything else defaulted.
pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    parse_config_str(&format!("schema_version = {SCHEMA_VERSION}\npreset = {name}\n"), None)
}
