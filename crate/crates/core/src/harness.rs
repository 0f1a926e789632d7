//! Scenario runs, field sweeps, figure drivers and artifact writing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{preset_config, ApparatusMetadata, ExperimentConfig};
use crate::error::{Error, Result};
use crate::rng::GENERATOR_VERSION;
use crate::signal::{LightSource, MagnetometerScenario, TraceSynthesizer};
use crate::spectral::{
    estimate_psd_channels, extract_sensitivity, floor_level, NoiseSpectrum, SensitivityReport, SpectrumConfig,
};
use crate::squeezing::{
    fwm_output_state, intensity_difference_noise_ratio, photon_number_covariance, to_db, FwmChain,
};
use crate::traces::{write_file, Channel};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "NMOR_SIM_OUT_DIR";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

impl TableFormat {
    fn ext(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutputOptions {
    pub out_dir: PathBuf,
    pub format: TableFormat,
}

impl OutputOptions {
    fn resolve(&self, configured: Option<&Path>, default_stem: &str) -> PathBuf {
        match configured {
            Some(p) if p.is_absolute() => p.to_path_buf(),
            Some(p) => self.out_dir.join(p),
            None => self.out_dir.join(format!("{default_stem}.{}", self.format.ext())),
        }
    }
}

/// Copy of `cfg` with another light source.
pub fn with_light(cfg: &ExperimentConfig, light: LightSource) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.scenario.light = light;
    c
}

/// Synthesizes the scenario (streaming, never materialized) and estimates
/// one spectrum per channel.
pub fn measure_channels(cfg: &ExperimentConfig, channels: &[Channel]) -> Result<Vec<NoiseSpectrum>> {
    let synth = TraceSynthesizer::new(&cfg.scenario)?;
    estimate_psd_channels(&synth, &cfg.spectrum, channels)
}

pub fn measure(cfg: &ExperimentConfig) -> Result<NoiseSpectrum> {
    Ok(measure_channels(cfg, &[cfg.spectrum.channel])?.remove(0))
}

/// Sensitivity report for a spectrum of the scenario's drive. A scenario
/// without an alternating field has no tone to measure.
pub fn analyze(spec: &NoiseSpectrum, scenario: &MagnetometerScenario) -> Result<SensitivityReport> {
    if scenario.drive.ac_amplitude == 0.0 || scenario.rotation_gain == 0.0 {
        let floor = floor_level(spec, None)?;
        return Err(Error::NotMeasurable(format!(
            "no alternating drive, no tone to detect (floor {:.3} dB rel SNL)",
            to_db(floor)
        )));
    }
    extract_sensitivity(spec, &scenario.drive)
}

/// Synthesize → estimate → extract for the configured channel.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<(NoiseSpectrum, SensitivityReport)> {
    let spec = measure(cfg)?;
    let report = analyze(&spec, &cfg.scenario)?;
    Ok((spec, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub applied_field: f64,
    pub snr_snl_db: f64,
    pub snr_squeezed_db: f64,
    pub sensitivity_snl: f64,
    pub sensitivity_squeezed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub applied_field: f64,
    pub exit_code: i32,
    pub error: String,
}

/// Rows in input order; points that failed are listed separately.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str =
        "applied_field,snr_snl_db,snr_squeezed_db,sensitivity_snl,sensitivity_squeezed";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.applied_field, r.snr_snl_db, r.snr_squeezed_db, r.sensitivity_snl, r.sensitivity_squeezed
            ));
        }
        s
    }
}

/// Seed for sweep point `i`; both light sources at a point share it.
pub fn sweep_point_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

fn sweep_point(cfg: &ExperimentConfig, i: usize, field: f64) -> Result<SweepRow> {
    let mut c = cfg.clone();
    c.scenario.drive.ac_amplitude = field;
    c.scenario.rng_seed = sweep_point_seed(cfg.scenario.rng_seed, i);
    let (_, snl) = run_scenario(&with_light(&c, LightSource::ShotNoiseReference))?;
    let (_, sq) = run_scenario(&with_light(&c, LightSource::Squeezed))?;
    Ok(SweepRow {
        applied_field: field,
        snr_snl_db: snl.snr_power_db,
        snr_squeezed_db: sq.snr_power_db,
        sensitivity_snl: snl.sensitivity,
        sensitivity_squeezed: sq.sensitivity,
    })
}

/// Paired shot-noise-reference and squeezed runs at every sweep amplitude.
/// Points run concurrently; a failing point is recorded and the rest go on.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let fields = match &cfg.sweep {
        Some(f) if !f.is_empty() => f.clone(),
        _ => return Err(Error::config(None, "sweep needs a non-empty [sweep] amplitude list")),
    };
    let outcomes: Vec<(f64, Result<SweepRow>)> = fields
        .par_iter()
        .enumerate()
        .map(|(i, &b)| (b, sweep_point(cfg, i, b)))
        .collect();
    let mut result = SweepResult::default();
    for (b, outcome) in outcomes {
        match outcome {
            Ok(row) => result.rows.push(row),
            Err(e) => result.failures.push(SweepFailure {
                applied_field: b,
                exit_code: e.exit_code(),
                error: e.to_string(),
            }),
        }
    }
    Ok(result)
}

/// Squeezing figures of merit of a mixer chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSummary {
    pub chain: FwmChain,
    pub noise_power_ratio: f64,
    pub squeezing_db: f64,
    pub detected_flux_probe: f64,
    pub detected_flux_conjugate: f64,
    pub var_probe_rel_snl: f64,
    pub var_conjugate_rel_snl: f64,
    pub min_uncertainty_eigenvalue: f64,
}

pub fn state_summary(chain: &FwmChain) -> Result<StateSummary> {
    let state = fwm_output_state(chain)?;
    let npr = intensity_difference_noise_ratio(&state)?;
    let stats = photon_number_covariance(&state);
    Ok(StateSummary {
        chain: *chain,
        noise_power_ratio: npr,
        squeezing_db: to_db(npr),
        detected_flux_probe: stats.mean_np,
        detected_flux_conjugate: stats.mean_nc,
        var_probe_rel_snl: stats.var_np / stats.mean_np,
        var_conjugate_rel_snl: stats.var_nc / stats.mean_nc,
        min_uncertainty_eigenvalue: state.min_uncertainty_eigenvalue(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSummary {
    pub snl_sensitivity_target: Option<f64>,
    pub rotation_gain_rad_per_tesla: f64,
    pub peak_rotation_rad: f64,
}

pub fn calibration_summary(cfg: &ExperimentConfig) -> CalibrationSummary {
    let mut peak = cfg.scenario.drive.peak_field();
    if let Some(s) = &cfg.sweep {
        peak = peak.max(s.iter().fold(0.0, |m: f64, v| m.max(*v)) + cfg.scenario.drive.dc_field.abs());
    }
    CalibrationSummary {
        snl_sensitivity_target: cfg.snl_sensitivity_target,
        rotation_gain_rad_per_tesla: cfg.scenario.rotation_gain,
        peak_rotation_rad: cfg.scenario.rotation_gain * peak,
    }
}

/// JSON report envelope shared by every run type.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport<T: Serialize> {
    pub tool_version: &'static str,
    pub generator_version: &'static str,
    pub seed: u64,
    pub preset: Option<String>,
    pub provenance: BTreeMap<String, String>,
    pub metadata: ApparatusMetadata,
    pub scenario: MagnetometerScenario,
    pub spectrum: SpectrumConfig,
    pub snl_sensitivity_target: Option<f64>,
    pub target_squeezing_db: Option<f64>,
    pub results: T,
}

pub fn run_report<T: Serialize>(cfg: &ExperimentConfig, results: T) -> RunReport<T> {
    RunReport {
        tool_version: TOOL_VERSION,
        generator_version: GENERATOR_VERSION,
        seed: cfg.scenario.rng_seed,
        preset: cfg.preset.clone(),
        provenance: cfg.provenance.clone(),
        metadata: cfg.metadata.clone(),
        scenario: cfg.scenario.clone(),
        spectrum: cfg.spectrum,
        snl_sensitivity_target: cfg.snl_sensitivity_target,
        target_squeezing_db: cfg.target_squeezing_db,
        results,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct SpectrumTable<'a> {
    frequency_hz: &'a [f64],
    psd_db_rel_snl: &'a [f64],
}

pub fn spectrum_table(spec: &NoiseSpectrum, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => spec.to_csv(),
        TableFormat::Json => to_json(&SpectrumTable {
            frequency_hz: &spec.frequencies,
            psd_db_rel_snl: &spec.psd_db_rel_snl,
        }),
    }
}

pub fn sweep_table(result: &SweepResult, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => result.to_csv(),
        TableFormat::Json => to_json(&result.rows),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_traces(cfg: &ExperimentConfig, opts: &OutputOptions, written: &mut Vec<PathBuf>) -> Result<()> {
    if cfg.outputs.traces_csv.is_none() && cfg.outputs.traces_bin.is_none() {
        return Ok(());
    }
    let traces = TraceSynthesizer::new(&cfg.scenario)?.materialize();
    if let Some(p) = &cfg.outputs.traces_csv {
        let path = opts.resolve(Some(p), "traces");
        traces.write_csv(&path)?;
        written.push(path);
    }
    if let Some(p) = &cfg.outputs.traces_bin {
        let path = opts.resolve(Some(p), "traces");
        traces.write_binary(&path)?;
        written.push(path);
    }
    Ok(())
}

/// Result of a driver: files written and the exit status to report.
#[derive(Debug)]
pub struct RunOutcome {
    pub written: Vec<PathBuf>,
    /// First measurement failure, if any; artifacts are still written.
    pub failure: Option<Error>,
}

/// One scenario: spectrum table, JSON report, optional raw traces.
pub fn simulate(cfg: &ExperimentConfig, opts: &OutputOptions) -> Result<RunOutcome> {
    ensure_dir(&opts.out_dir)?;
    let mut written = Vec::new();
    let spec = measure(cfg)?;
    let report = analyze(&spec, &cfg.scenario);
    let spec_path = opts.resolve(cfg.outputs.spectrum_csv.as_deref(), "spectrum");
    write_file(&spec_path, spectrum_table(&spec, opts.format).as_bytes())?;
    written.push(spec_path);

    #[derive(Serialize)]
    struct Results {
        floor_db_rel_snl: f64,
        sensitivity: Option<SensitivityReport>,
        error: Option<String>,
    }
    let floor = floor_level(&spec, (cfg.scenario.drive.ac_amplitude > 0.0).then_some(cfg.scenario.drive.ac_frequency))
        .unwrap_or(f64::NAN);
    let (sensitivity, failure) = match report {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e)),
    };
    let results = Results {
        floor_db_rel_snl: to_db(floor),
        sensitivity,
        error: failure.as_ref().map(|e| e.to_string()),
    };
    let report_path = opts.out_dir.join(
        cfg.outputs
            .report_json
            .clone()
            .unwrap_or_else(|| PathBuf::from("report.json")),
    );
    write_file(&report_path, to_json(&run_report(cfg, results)).as_bytes())?;
    written.push(report_path);
    write_traces(cfg, opts, &mut written)?;
    Ok(RunOutcome { written, failure })
}

/// Field sweep: sweep table plus JSON report.
pub fn sweep(cfg: &ExperimentConfig, opts: &OutputOptions) -> Result<(SweepResult, RunOutcome)> {
    ensure_dir(&opts.out_dir)?;
    let result = run_sweep(cfg)?;
    let table = opts.resolve(cfg.outputs.sweep_csv.as_deref(), "sweep");
    write_file(&table, sweep_table(&result, opts.format).as_bytes())?;
    let report_path = opts.out_dir.join(
        cfg.outputs
            .report_json
            .clone()
            .unwrap_or_else(|| PathBuf::from("sweep_report.json")),
    );
    write_file(&report_path, to_json(&run_report(cfg, &result)).as_bytes())?;
    let failure = result.failures.first().map(|f| {
        if f.exit_code == 4 {
            Error::NotMeasurable(f.error.clone())
        } else {
            Error::Infeasible(f.error.clone())
        }
    });
    Ok((
        result,
        RunOutcome {
            written: vec![table, report_path],
            failure,
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct LabeledSpectrumReport {
    pub label: String,
    pub floor_db_rel_snl: f64,
    pub sensitivity: Option<SensitivityReport>,
    pub error: Option<String>,
}

fn labeled(label: &str, spec: &NoiseSpectrum, scenario: &MagnetometerScenario) -> (LabeledSpectrumReport, Option<Error>) {
    let floor = floor_level(spec, Some(scenario.drive.ac_frequency)).map(to_db).unwrap_or(f64::NAN);
    let (sensitivity, err) = match analyze(spec, scenario) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e)),
    };
    (
        LabeledSpectrumReport {
            label: label.to_string(),
            floor_db_rel_snl: floor,
            sensitivity,
            error: err.as_ref().map(|e| e.to_string()),
        },
        err,
    )
}

/// Spectra for a figure: `(label, config, channels)` runs, each a single
/// synthesis pass.
fn figure_runs(figure: u8, cfg: &ExperimentConfig) -> Vec<(Vec<&'static str>, ExperimentConfig, Vec<Channel>)> {
    match figure {
        2 => vec![
            (vec!["squeezed"], with_light(cfg, LightSource::Squeezed), vec![Channel::Difference]),
            (
                vec!["shot_noise"],
                with_light(cfg, LightSource::ShotNoiseReference),
                vec![Channel::Difference],
            ),
        ],
        _ => vec![(
            vec!["difference", "probe", "conjugate"],
            with_light(cfg, LightSource::Squeezed),
            vec![Channel::Difference, Channel::Probe, Channel::Conjugate],
        )],
    }
}

/// Reproduces a figure from its preset, or from `cfg` when given (which
/// should be based on the same preset).
pub fn reproduce(figure: u8, cfg: Option<&ExperimentConfig>, opts: &OutputOptions) -> Result<RunOutcome> {
    if !(2..=4).contains(&figure) {
        return Err(Error::config(None, format!("no driver for figure {figure} (2, 3 or 4)")));
    }
    let owned;
    let cfg = match cfg {
        Some(c) => c,
        None => {
            owned = preset_config(&format!("fig{figure}"))?;
            &owned
        }
    };
    if figure == 4 {
        let mut c = cfg.clone();
        c.outputs.sweep_csv = Some(PathBuf::from(format!("fig4_sweep.{}", opts.format.ext())));
        c.outputs.report_json = Some(PathBuf::from("fig4_report.json"));
        return sweep(&c, opts).map(|(_, o)| o);
    }
    ensure_dir(&opts.out_dir)?;
    let mut written = Vec::new();
    let mut reports = Vec::new();
    let mut failure = None;
    for (labels, run_cfg, channels) in figure_runs(figure, cfg) {
        let spectra = measure_channels(&run_cfg, &channels)?;
        for (label, spec) in labels.iter().zip(&spectra) {
            let path = opts
                .out_dir
                .join(format!("fig{figure}_{label}.{}", opts.format.ext()));
            write_file(&path, spectrum_table(spec, opts.format).as_bytes())?;
            written.push(path);
            let (rep, err) = labeled(label, spec, &run_cfg.scenario);
            // the shot-noise trace in figure 2 is expected to be marginal
            if failure.is_none() && !(figure == 2 && *label == "shot_noise") {
                failure = err;
            }
            reports.push(rep);
        }
    }
    let report_path = opts.out_dir.join(format!("fig{figure}_report.json"));
    write_file(&report_path, to_json(&run_report(cfg, &reports)).as_bytes())?;
    written.push(report_path);
    Ok(RunOutcome { written, failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn small() -> ExperimentConfig {
        parse_config_str(
            "schema_version = 1\n\
             [drive]\nac_amplitude_tesla = 1e-8\n\
             [spectrum]\nrbw_hz = 1000\nvbw_hz = 1000\ntrace_averages = 20\nspan_hz = 100000\n",
            None,
        )
        .unwrap()
    }

    #[test]
    fn scenario_detects_tone() {
        let (spec, rep) = run_scenario(&small()).unwrap();
        assert!(!spec.is_empty());
        assert!(rep.snr_power_db > 10.0);
        assert_eq!(rep.channel, Channel::Difference);
    }

    #[test]
    fn zero_drive_is_not_measurable() {
        let mut c = small();
        c.scenario.drive.ac_amplitude = 0.0;
        let err = run_scenario(&c).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let floor = to_db(floor_level(&measure(&c).unwrap(), None).unwrap());
        assert!((floor + 4.7).abs() < 0.3, "{floor}");
    }

    #[test]
    fn sweep_keeps_input_order_and_records_failures() {
        let mut c = small();
        // the last point rotates past the linear range and fails
        let k = c.scenario.rotation_gain;
        c.sweep = Some(vec![1e-8, 2e-8, 1.0 / k]);
        let r = run_sweep(&c).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows[0].applied_field < r.rows[1].applied_field);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].exit_code, 3);
        assert!(r.to_csv().starts_with(SweepResult::CSV_HEADER));
    }

    #[test]
    fn empty_sweep_is_config_error() {
        let mut c = small();
        c.sweep = Some(vec![]);
        assert_eq!(run_sweep(&c).unwrap_err().exit_code(), 2);
        c.sweep = None;
        assert_eq!(run_sweep(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn state_summary_ideal() {
        let s = state_summary(&FwmChain::new(12.6, 1.0, 1.0, 1e12).unwrap()).unwrap();
        assert!((s.noise_power_ratio - 1.0 / 24.2).abs() < 1e-9);
        assert!(s.min_uncertainty_eigenvalue > -1e-9);
    }
}
