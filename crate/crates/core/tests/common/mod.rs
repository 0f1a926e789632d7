//! Shared helpers for the integration suites.
#![allow(dead_code)]

use nmor_sim::config::{parse_config_str, ExperimentConfig};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

/// Monte Carlo estimate of Var(n_p − n_c) / (⟨n_p⟩ + ⟨n_c⟩) with its
/// standard error.
///
/// Samples the Wigner function of the input modes (coherent seed plus vacuum
/// noise of 1/4 per complex-amplitude quadrature), pushes each sample through
/// the Bogoliubov map and the loss beam splitters as complex numbers, and
/// converts the symmetrically ordered moments back to photon numbers. Shares
/// nothing with the library's covariance-matrix code.
pub struct MonteCarloNpr {
    pub npr: f64,
    pub std_err: f64,
}

pub fn monte_carlo_npr(gain: f64, eta_p: f64, eta_c: f64, seed_photons: f64, samples: usize, seed: u64) -> MonteCarloNpr {
    let mut rng = StdRng::seed_from_u64(seed);
    let vac = Normal::new(0.0, 0.5).unwrap();
    let draw = |rng: &mut StdRng| (vac.sample(rng), vac.sample(rng));
    let (g, h) = (gain.sqrt(), (gain - 1.0).sqrt());
    let alpha = seed_photons.sqrt();

    let mut d = Vec::with_capacity(samples);
    let (mut sum_np, mut sum_nc) = (0.0, 0.0);
    for _ in 0..samples {
        let (ar, ai) = draw(&mut rng);
        let (cr, ci) = draw(&mut rng);
        let (a_re, a_im) = (alpha + ar, ai);
        // b_p = g a_p + h conj(a_c), b_c = g a_c + h conj(a_p)
        let (bp_re, bp_im) = (g * a_re + h * cr, g * a_im - h * ci);
        let (bc_re, bc_im) = (g * cr + h * a_re, g * ci - h * a_im);
        let (vp, vc) = (draw(&mut rng), draw(&mut rng));
        let (tp, rp) = (eta_p.sqrt(), (1.0 - eta_p).sqrt());
        let (tc, rc) = (eta_c.sqrt(), (1.0 - eta_c).sqrt());
        let op = (tp * bp_re + rp * vp.0, tp * bp_im + rp * vp.1);
        let oc = (tc * bc_re + rc * vc.0, tc * bc_im + rc * vc.1);
        // symmetric ordering: n = |β|² − 1/2
        let np = op.0 * op.0 + op.1 * op.1 - 0.5;
        let nc = oc.0 * oc.0 + oc.1 * oc.1 - 0.5;
        sum_np += np;
        sum_nc += nc;
        d.push(np - nc);
    }
    let m = samples as f64;
    let mean_d = d.iter().sum::<f64>() / m;
    let dev: Vec<f64> = d.iter().map(|x| x - mean_d).collect();
    let m2 = dev.iter().map(|x| x * x).sum::<f64>() / m;
    let m4 = dev.iter().map(|x| x.powi(4)).sum::<f64>() / m;
    // Wigner moments of (n_p − n_c)² exceed the operator moments by 1/4 per mode.
    let var = m2 - 0.5;
    let total = (sum_np + sum_nc) / m;
    MonteCarloNpr {
        npr: var / total,
        std_err: ((m4 - m2 * m2) / m).sqrt() / total,
    }
}

/// A small, fast scenario: RBW 1 kHz, a 10 nT tone at 700 kHz.
pub fn small_config(extra: &str) -> ExperimentConfig {
    parse_config_str(&small_config_text(extra), None).unwrap()
}

pub fn small_config_text(extra: &str) -> String {
    format!(
        "schema_version = 1\n\
         [drive]\nac_amplitude_tesla = 1e-8\n\
         [spectrum]\nrbw_hz = 1000\nvbw_hz = 1000\ntrace_averages = 40\nspan_hz = 100000\n\
         {extra}"
    )
}

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}
