mod common;

use common::{rel, small_config};
use nmor_sim::harness::{measure, run_scenario};
use nmor_sim::signal::LightSource;
use nmor_sim::spectral::{floor_level, tone_snr, welch_psd, Window};
use nmor_sim::squeezing::{fwm_output_state, intensity_difference_noise_ratio, to_db};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn white(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn parseval_holds(seed in any::<u64>(), len in 16usize..2048, hann in any::<bool>(), offset in -5.0f64..5.0) {
        let x: Vec<f64> = white(len, 1.0, seed).into_iter().map(|v| v + offset).collect();
        let fs = 1000.0;
        let window = if hann { Window::Hann } else { Window::Rectangular };
        let psd = welch_psd(&x, fs, window, len, 1).unwrap();
        let w = window.coefficients(len);
        let mean = x.iter().sum::<f64>() / len as f64;
        let energy: f64 = x.iter().zip(&w).map(|(v, wk)| ((v - mean) * wk).powi(2)).sum();
        let w2: f64 = w.iter().map(|v| v * v).sum();
        let integral: f64 = psd.iter().sum::<f64>() * fs / len as f64;
        prop_assert!(rel(integral, energy / w2) < 5e-3);
    }
}

#[test]
fn white_noise_floor_reads_its_density() {
    let fs = 10_000.0;
    let (seg, k) = (1000, 200);
    let x = white(seg * k, 2.0, 3);
    let psd = welch_psd(&x, fs, Window::Hann, seg, k).unwrap();
    let level = psd[1..seg / 2].iter().sum::<f64>() / (seg / 2 - 1) as f64;
    let expected = 2.0 * 4.0 / fs;
    assert!((10.0 * (level / expected).log10()).abs() < 0.15);
}

#[test]
fn bin_scatter_shrinks_as_one_over_root_averages() {
    let fs = 10_000.0;
    let seg = 512;
    for k in [4usize, 16, 64] {
        let x = white(seg * k, 1.0, 9);
        let psd = welch_psd(&x, fs, Window::Hann, seg, k).unwrap();
        let bins = &psd[10..seg / 2 - 10];
        let m = bins.iter().sum::<f64>() / bins.len() as f64;
        let sd = (bins.iter().map(|v| (v - m).powi(2)).sum::<f64>() / bins.len() as f64).sqrt();
        let expected = 1.0 / (k as f64).sqrt();
        assert!(rel(sd / m, expected) < 0.2, "K={k}: {} vs {expected}", sd / m);
    }
}

#[test]
fn difference_floor_matches_state_noise_ratio() {
    let mut cfg = small_config("");
    cfg.scenario.drive.ac_amplitude = 0.0;
    cfg.spectrum.trace_averages = 100;
    cfg.scenario.duration = cfg.spectrum.duration_required(cfg.scenario.sample_rate).unwrap();
    let spec = measure(&cfg).unwrap();
    let npr = intensity_difference_noise_ratio(&fwm_output_state(&cfg.scenario.chain).unwrap()).unwrap();
    let floor = to_db(floor_level(&spec, None).unwrap());
    assert!((floor - to_db(npr)).abs() < 0.15, "{floor} vs {}", to_db(npr));

    cfg.scenario.light = LightSource::ShotNoiseReference;
    let floor = to_db(floor_level(&measure(&cfg).unwrap(), None).unwrap());
    assert!(floor.abs() < 0.15, "{floor}");
}

#[test]
fn snr_grows_twenty_db_per_decade_of_field() {
    let mut pts = Vec::new();
    for b in [5e-9, 1.58e-8, 5e-8, 1.58e-7, 5e-7] {
        let mut cfg = small_config("");
        cfg.scenario.drive.ac_amplitude = b;
        let (spec, _) = run_scenario(&cfg).unwrap();
        pts.push((20.0 * f64::log10(b), tone_snr(&spec, 700e3).unwrap()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope - 1.0).abs() < 0.05, "{slope}");
}

#[test]
fn sensitivity_is_independent_of_field_in_linear_range() {
    let sens: Vec<f64> = [2e-8, 2e-7]
        .iter()
        .map(|&b| {
            let mut cfg = small_config("");
            cfg.scenario.drive.ac_amplitude = b;
            run_scenario(&cfg).unwrap().1.sensitivity
        })
        .collect();
    assert!(rel(sens[0], sens[1]) < 0.1, "{sens:?}");
}
