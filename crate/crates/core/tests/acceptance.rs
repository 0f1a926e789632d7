//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Lines are written straight to stderr so they show up in captured runs.

mod common;

use std::io::Write;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use common::{monte_carlo_npr, rel};
use nmor_sim::config::{parse_config_str, preset_config};
use nmor_sim::harness::{measure_channels, run_scenario, run_sweep, with_light};
use nmor_sim::physics::{larmor_frequency, rb_vapor_density, LarmorParams, CODATA};
use nmor_sim::signal::{synthesize_traces, LightSource};
use nmor_sim::spectral::{estimate_psd, extract_sensitivity, fwhm_linewidth, tone_amplitude, welch_psd, SpectrumConfig, Window};
use nmor_sim::squeezing::{
    fwm_output_state, infer_efficiency, intensity_difference_noise_ratio, noise_ratio_equal_arms, to_db, FwmChain,
};
use nmor_sim::traces::{Channel, PhotocurrentTraces, Provenance, SnlReference};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

// Criteria run one at a time so the fig2 wall-clock budget is not shared.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {id:>2} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

#[test]
fn c01_ideal_squeezing_law() {
    let _g = serial();
    let t = Instant::now();
    let chain = FwmChain::new(12.6, 1.0, 1.0, 8e13).unwrap();
    let closed = intensity_difference_noise_ratio(&fwm_output_state(&chain).unwrap()).unwrap();
    let mc = monte_carlo_npr(12.6, 1.0, 1.0, 1e8, 1_000_000, 2024);
    let elapsed = t.elapsed();
    let target = 1.0 / 24.2;
    let z = (mc.npr - target) / mc.std_err;
    let pass = (closed - target).abs() < 1e-9 && z.abs() < 3.0 && elapsed < Duration::from_secs(10);
    report(
        1,
        "ideal squeezing law",
        pass,
        format!(
            "closed {closed:.12} (|err| {:.1e}), monte carlo {:.6} ({z:+.2} sigma), {:.2} s",
            (closed - target).abs(),
            mc.npr,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn c02_efficiency_closure() {
    let _g = serial();
    let eta = infer_efficiency(-4.7, 12.6).unwrap();
    let fwd = to_db(noise_ratio_equal_arms(12.6, eta).unwrap());
    let chain = FwmChain::new(12.6, eta, eta, 8e13).unwrap();
    let state = to_db(intensity_difference_noise_ratio(&fwm_output_state(&chain).unwrap()).unwrap());
    let pass = (eta - 0.690).abs() <= 0.005 && (fwd + 4.70).abs() <= 0.01 && (state + 4.70).abs() <= 0.01;
    report(
        2,
        "efficiency closure",
        pass,
        format!("eta {eta:.5}, forward {fwd:.4} dB (closed form), {state:.4} dB (state model)"),
    );
}

#[test]
fn c03_sensitivity_pair() {
    let _g = serial();
    // The calibrated fig3 apparatus, read out with enough averaging that the
    // floor estimate is well below the 2 % ratio tolerance.
    let cfg = parse_config_str(
        "schema_version = 1\npreset = fig3\n[spectrum]\nrbw_hz = 100\ntrace_averages = 1000\n",
        None,
    )
    .unwrap();
    let (_, snl) = run_scenario(&with_light(&cfg, LightSource::ShotNoiseReference)).unwrap();
    let (_, sq) = run_scenario(&with_light(&cfg, LightSource::Squeezed)).unwrap();
    let ratio = sq.sensitivity / snl.sensitivity;
    let expected = 10f64.powf(-4.7 / 20.0);
    let pass = rel(snl.sensitivity, 33.2e-12) <= 0.05 && rel(sq.sensitivity, 19.3e-12) <= 0.05 && rel(ratio, expected) <= 0.02;
    report(
        3,
        "sensitivity pair",
        pass,
        format!(
            "SNL {:.2} pT/rtHz, squeezed {:.2} pT/rtHz, ratio {ratio:.4} (expected {expected:.4})",
            snl.sensitivity * 1e12,
            sq.sensitivity * 1e12
        ),
    );
}

#[test]
fn c04_fig2_reproduction() {
    let _g = serial();
    let cfg = preset_config("fig2").unwrap();
    let t = Instant::now();
    let (_, sq) = run_scenario(&with_light(&cfg, LightSource::Squeezed)).unwrap();
    let snl = run_scenario(&with_light(&cfg, LightSource::ShotNoiseReference));
    let elapsed = t.elapsed();
    let snl_snr = match &snl {
        Ok((_, r)) => r.snr_power_db,
        // not detected at all is the extreme of "marginal"
        Err(e) if e.exit_code() == 4 => f64::NEG_INFINITY,
        Err(e) => panic!("{e}"),
    };
    let pass = cfg.spectrum.rbw == 1.0
        && cfg.spectrum.trace_averages == 100
        && (sq.snr_power_db - 5.8).abs() <= 1.0
        && snl_snr <= 2.0
        && (sq.squeezing_db + 4.5).abs() <= 0.15
        && elapsed < Duration::from_secs(60);
    report(
        4,
        "fig2 reproduction",
        pass,
        format!(
            "squeezed SNR {:.2} dB, SNL SNR {snl_snr:.2} dB, floor {:.3} dB, {} averages of {} samples, {:.1} s",
            sq.snr_power_db,
            sq.squeezing_db,
            sq.effective_averages,
            cfg.spectrum.segment_len(cfg.scenario.sample_rate).unwrap(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn c05_fig3_reproduction() {
    let _g = serial();
    let cfg = preset_config("fig3").unwrap();
    let spectra = measure_channels(&cfg, &[Channel::Difference, Channel::Probe, Channel::Conjugate]).unwrap();
    let drive = cfg.scenario.drive;
    let reps: Vec<_> = spectra.iter().map(|s| extract_sensitivity(s, &drive).unwrap()).collect();
    let amps: Vec<f64> = spectra.iter().map(|s| tone_amplitude(s, drive.ac_frequency).unwrap()).collect();
    let (diff, probe, conj) = (&reps[0], &reps[1], &reps[2]);
    let sum = amps[1] + amps[2];
    let pass = cfg.scenario.classical_noise_rel_snl >= 10.0
        && drive.ac_amplitude == 5.9e-9
        && probe.squeezing_db - diff.squeezing_db >= 10.0
        && conj.squeezing_db - diff.squeezing_db >= 10.0
        && (diff.squeezing_db + 4.7).abs() <= 0.15
        && rel(amps[0], sum) <= 0.02
        && diff.snr_power_db > probe.snr_power_db.max(conj.snr_power_db);
    report(
        5,
        "fig3 reproduction",
        pass,
        format!(
            "floors: difference {:.3} dB, probe {:.2} dB, conjugate {:.2} dB; tone amplitude {:.1} vs {:.1} + {:.1} counts ({:.3} %)",
            diff.squeezing_db,
            probe.squeezing_db,
            conj.squeezing_db,
            amps[0],
            amps[1],
            amps[2],
            100.0 * rel(amps[0], sum)
        ),
    );
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn c06_fig4_trend() {
    let _g = serial();
    let cfg = preset_config("fig4").unwrap();
    let sweep = run_sweep(&cfg).unwrap();
    let fields = cfg.sweep.as_ref().unwrap();
    let x: Vec<f64> = sweep.rows.iter().map(|r| 20.0 * r.applied_field.log10()).collect();
    let sq: Vec<f64> = sweep.rows.iter().map(|r| r.snr_squeezed_db).collect();
    let snl: Vec<f64> = sweep.rows.iter().map(|r| r.snr_snl_db).collect();
    let offsets: Vec<f64> = sq.iter().zip(&snl).map(|(a, b)| a - b).collect();
    let (s_sq, s_snl) = (slope(&x, &sq), slope(&x, &snl));
    let worst = offsets.iter().fold(0.0f64, |m, o| m.max((o - 4.7).abs()));
    let decades = (fields[fields.len() - 1] / fields[0]).log10();
    let pass = sweep.failures.is_empty()
        && sweep.rows.len() == fields.len()
        && (decades - 2.0).abs() < 1e-9
        && cfg.spectrum.rbw == 10e3
        && cfg.spectrum.vbw == 100.0
        && cfg.spectrum.trace_averages == 10
        && (s_sq - 1.0).abs() <= 0.05
        && (s_snl - 1.0).abs() <= 0.05
        && worst <= 0.3;
    report(
        6,
        "fig4 trend",
        pass,
        format!(
            "{} points over {decades:.1} decades, slope squeezed {s_sq:.4}, SNL {s_snl:.4}, offsets {:.2}..{:.2} dB",
            sweep.rows.len(),
            offsets.iter().cloned().fold(f64::INFINITY, f64::min),
            offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        ),
    );
}

#[test]
fn c07_linewidth() {
    let _g = serial();
    let fs = 1.5e6;
    let cfg = SpectrumConfig {
        rbw: 1.0,
        vbw: 100.0,
        trace_averages: 1,
        window: Window::Hann,
        center_frequency: 700e3,
        span: 200.0,
        channel: Channel::Probe,
    };
    let n = cfg.samples_required(fs).unwrap();
    let mut widths = Vec::new();
    // on a bin, a quarter and half a bin off
    for f0 in [700e3, 700e3 + 1.0 / 6.0, 700e3 + 1.0 / 3.0] {
        let mut rng = StdRng::seed_from_u64(5);
        let probe: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                1e3 + 100.0 * (2.0 * std::f64::consts::PI * f0 * t).sin() + 1e-3 * (rng.random::<f64>() - 0.5)
            })
            .collect();
        let traces = PhotocurrentTraces {
            conjugate: vec![0.0; n],
            difference: probe.clone(),
            probe,
            sample_rate: fs,
            snl: SnlReference { probe: 1.0, conjugate: 1.0, difference: 1.0 },
            provenance: Provenance { rng_seed: 5, generator_version: "test".into() },
        };
        let spec = estimate_psd(&traces, &cfg).unwrap();
        widths.push(fwhm_linewidth(&spec, f0).unwrap());
    }
    let pass = widths.iter().all(|w| (1.0..=3.0).contains(w));
    report(7, "linewidth", pass, format!("FWHM at RBW 1 Hz: {widths:.3?} Hz"));
}

#[test]
fn c08_larmor() {
    let _g = serial();
    let f = larmor_frequency(&LarmorParams::new(2.0, 1e-4).unwrap(), &CODATA).unwrap() / (2.0 * std::f64::consts::PI);
    let pass = (f - 2.799e6).abs() <= 1e3;
    report(8, "larmor check", pass, format!("{:.4} MHz", f / 1e6));
}

#[test]
fn c09_property_suites() {
    let _g = serial();
    let mut rng = StdRng::seed_from_u64(9);

    let mut worst_eig = f64::INFINITY;
    for _ in 0..1000 {
        let chain = FwmChain::new(
            1.0 + 30.0 * rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
            10f64.powf(rng.random_range(0.0..15.0)),
        )
        .unwrap();
        worst_eig = worst_eig.min(fwm_output_state(&chain).unwrap().min_uncertainty_eigenvalue());
    }
    let physical = worst_eig >= -1e-9;

    let mut worst_parseval = 0.0f64;
    for _ in 0..100 {
        let len = rng.random_range(16..4096);
        let x: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
        let psd = welch_psd(&x, 1.0, Window::Rectangular, len, 1).unwrap();
        let mean = x.iter().sum::<f64>() / len as f64;
        let power = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
        let integral = psd.iter().sum::<f64>() / len as f64;
        worst_parseval = worst_parseval.max(rel(integral, power));
    }
    let parseval = worst_parseval <= 5e-3;

    let deterministic = cli_outputs_match_across_workers();

    let mut cfg = common::small_config("");
    cfg.scenario.duration = 100_000.0 / cfg.scenario.sample_rate;
    let quiet = synthesize_traces(&cfg.scenario).unwrap();
    cfg.scenario.classical_noise_rel_snl = 1e3;
    let loud = synthesize_traces(&cfg.scenario).unwrap();
    let scale = loud.probe.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst_cm = quiet
        .difference
        .iter()
        .zip(&loud.difference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / (scale * f64::EPSILON);
    let cancels = worst_cm <= 8.0;

    report(
        9,
        "property suites",
        physical && parseval && deterministic && cancels,
        format!(
            "min eigenvalue {worst_eig:.2e} over 1000 chains; Parseval worst {:.1e}; \
             worker-count determinism {deterministic}; common-mode residue {worst_cm:.1} ulp",
            worst_parseval
        ),
    );
}

fn cli_outputs_match_across_workers() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    std::fs::write(&cfg, common::small_config_text("[sweep]\nac_amplitudes_tesla = 1e-8, 1e-7\n")).unwrap();
    let runs: Vec<Vec<Vec<u8>>> = ["1", "3"]
        .iter()
        .map(|w| {
            let out = dir.path().join(format!("w{w}"));
            for cmd in ["simulate", "sweep"] {
                let ok = Command::new(env!("CARGO_BIN_EXE_nmor-sim"))
                    .args([cmd, "--workers", w, "--seed", "7", "--config"])
                    .arg(&cfg)
                    .arg("--out-dir")
                    .arg(&out)
                    .status()
                    .unwrap()
                    .success();
                assert!(ok);
            }
            ["spectrum.csv", "report.json", "sweep.csv", "sweep_report.json"]
                .iter()
                .map(|f| std::fs::read(out.join(f)).unwrap())
                .collect()
        })
        .collect();
    runs[0] == runs[1]
}

#[test]
fn c10_vapor_density() {
    let _g = serial();
    let n = rb_vapor_density(353.15).unwrap();
    let pass = rel(n, 1.36e12) <= 0.30;
    report(10, "vapor density", pass, format!("{n:.4e} cm^-3 at 353.15 K ({:+.1} %)", 100.0 * (n / 1.36e12 - 1.0)));
}
