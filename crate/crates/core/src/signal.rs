//! Magnetic field → polarization rotation → intensity modulation, and
//! synthesis of detected photocurrent traces.
//!
//! Each arm passes a polarizing beam splitter set near 45°, so to first order
//! in the rotation angle θ the detected flux is `N·(1/2 + s·θ)` with `s = ±1`
//! set by the splitter orientation. With opposite signs on the two arms the
//! modulation adds in the difference channel while common-mode noise cancels.
//!
//! Optical loss, including the analyzer port, is carried entirely by the arm
//! transmissions in [`FwmChain`]: the detected port sees the photon-number
//! statistics of the output state scaled to the port's mean flux, which keeps
//! the intensity-difference noise ratio of the state intact.

use std::f64::consts::{FRAC_PI_4, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{NormalStream, GENERATOR_VERSION};

const QUANTUM_STREAM: u64 = 0;
const CLASSICAL_STREAM: u64 = 1;
/// Absolute sample spacing of exact drive-phase evaluations.
const DRIVE_ANCHOR: usize = 1024;
use crate::squeezing::{fwm_output_state, photon_number_covariance, FwmChain, NumberStatistics};
use crate::traces::{PhotocurrentTraces, Provenance, SnlReference, TraceBlock, TraceSource};

/// Rotations at or beyond this are rejected outright.
pub const LINEAR_RANGE_LIMIT: f64 = FRAC_PI_4;
/// Small-angle bound used when calibrating the rotation gain.
pub const SMALL_ANGLE_LIMIT: f64 = 0.1;

const SYNTH_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldDrive {
    /// Static field, T.
    pub dc_field: f64,
    /// Zero-to-peak amplitude of the alternating field, T.
    pub ac_amplitude: f64,
    /// Hz.
    pub ac_frequency: f64,
    /// rad.
    pub phase: f64,
}

impl FieldDrive {
    pub fn ac(amplitude: f64, frequency: f64) -> Self {
        Self {
            dc_field: 0.0,
            ac_amplitude: amplitude,
            ac_frequency: frequency,
            phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dc_field", self.dc_field),
            ("ac_amplitude", self.ac_amplitude),
            ("ac_frequency", self.ac_frequency),
            ("phase", self.phase),
        ] {
            if !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite, got {v}")));
            }
        }
        if self.ac_amplitude < 0.0 {
            return Err(Error::domain(format!(
                "ac_amplitude is zero-to-peak and must be >= 0, got {}",
                self.ac_amplitude
            )));
        }
        if self.ac_frequency < 0.0 || (self.ac_amplitude > 0.0 && self.ac_frequency == 0.0) {
            return Err(Error::domain(format!(
                "ac_frequency must be > 0 with a nonzero drive, got {}",
                self.ac_frequency
            )));
        }
        Ok(())
    }

    /// Field at time `t`, T.
    #[inline]
    pub fn field_at(&self, t: f64) -> f64 {
        self.dc_field + self.ac_amplitude * self.phase_at(t).sin()
    }

    #[inline]
    fn phase_at(&self, t: f64) -> f64 {
        2.0 * PI * (self.ac_frequency * t).fract() + self.phase
    }

    /// Largest |B| the drive reaches.
    pub fn peak_field(&self) -> f64 {
        self.dc_field.abs() + self.ac_amplitude
    }
}

/// Orientation of a polarizing beam splitter relative to the rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PbsSign {
    #[serde(rename = "+1")]
    Plus,
    #[serde(rename = "-1")]
    Minus,
}

impl PbsSign {
    pub fn value(self) -> f64 {
        match self {
            PbsSign::Plus => 1.0,
            PbsSign::Minus => -1.0,
        }
    }
}

/// Light statistics used for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightSource {
    /// The two-mode squeezed output of the mixer.
    Squeezed,
    /// Coherent beams with the same mean fluxes: the shot-noise-limited reference.
    ShotNoiseReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerScenario {
    pub chain: FwmChain,
    pub drive: FieldDrive,
    /// Polarization rotation per unit field, rad/T.
    pub rotation_gain: f64,
    pub pbs_sign_probe: PbsSign,
    pub pbs_sign_conjugate: PbsSign,
    /// Common-mode classical noise power relative to the difference-channel
    /// shot-noise level.
    pub classical_noise_rel_snl: f64,
    pub light: LightSource,
    /// Hz.
    pub sample_rate: f64,
    /// s.
    pub duration: f64,
    pub rng_seed: u64,
}

impl MagnetometerScenario {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        self.drive.validate()?;
        if !(self.rotation_gain >= 0.0 && self.rotation_gain.is_finite()) {
            return Err(Error::domain(format!(
                "rotation gain must be >= 0, got {}",
                self.rotation_gain
            )));
        }
        if !(self.classical_noise_rel_snl >= 0.0 && self.classical_noise_rel_snl.is_finite()) {
            return Err(Error::domain(format!(
                "classical noise level must be >= 0, got {}",
                self.classical_noise_rel_snl
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Configuration(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.sample_rate <= 2.0 * self.drive.ac_frequency {
            return Err(Error::Configuration(format!(
                "sample rate {} Hz does not exceed twice the drive frequency {} Hz",
                self.sample_rate, self.drive.ac_frequency
            )));
        }
        let n = self.sample_rate * self.duration;
        if !(n.is_finite() && n >= 2.0 - 1e-9) || (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::Configuration(format!(
                "duration {} s × sample rate {} Hz must be an integer number of samples >= 2",
                self.duration, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.sample_rate * self.duration).round() as usize
    }

    /// Photon-number statistics of the light reaching the analyzers.
    pub fn number_statistics(&self) -> Result<NumberStatistics> {
        let state = fwm_output_state(&self.chain)?;
        let stats = photon_number_covariance(&state);
        Ok(match self.light {
            LightSource::Squeezed => stats,
            LightSource::ShotNoiseReference => {
                NumberStatistics::shot_noise_limited(stats.mean_np, stats.mean_nc)
            }
        })
    }

    /// Modulation coefficient of the difference channel: `|s_p·N_p − s_c·N_c|`.
    pub fn difference_modulation_flux(&self) -> Result<f64> {
        let state = fwm_output_state(&self.chain)?;
        let (np, nc) = state.mean_fluxes();
        Ok((self.pbs_sign_probe.value() * np - self.pbs_sign_conjugate.value() * nc).abs())
    }
}

/// θ(t) = κ·B(t) at each time.
pub fn rotation_angle_series(drive: &FieldDrive, rotation_gain: f64, times: &[f64]) -> Result<Vec<f64>> {
    drive.validate()?;
    if !(rotation_gain >= 0.0 && rotation_gain.is_finite()) {
        return Err(Error::domain(format!("rotation gain must be >= 0, got {rotation_gain}")));
    }
    let theta: Vec<f64> = times.iter().map(|&t| rotation_gain * drive.field_at(t)).collect();
    let max_angle = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_angle >= LINEAR_RANGE_LIMIT {
        return Err(Error::OutOfLinearRange {
            max_angle,
            limit: LINEAR_RANGE_LIMIT,
        });
    }
    Ok(theta)
}

/// Detected flux behind an analyzer at 45°, first order in θ.
pub fn pbs_intensity(theta: &[f64], mean_flux: f64, sign: PbsSign) -> Vec<f64> {
    let s = sign.value();
    theta.iter().map(|&th| mean_flux * (0.5 + s * th)).collect()
}

/// Rotation gain κ (rad/T) at which a field of `target` T/√Hz gives unit
/// amplitude SNR in a 1 Hz noise bandwidth with shot-noise-limited light.
///
/// The difference signal has amplitude `A = |s_p N_p − s_c N_c|·κ·B` (flux
/// units) against a one-sided shot-noise density of `N_p + N_c`, so unit
/// power SNR in 1 Hz requires `A²/2 = N_p + N_c`.
pub fn calibrate_rotation_gain(target: f64, scenario: &MagnetometerScenario) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::Calibration(format!("target sensitivity must be > 0, got {target}")));
    }
    if target.is_infinite() {
        return Ok(0.0);
    }
    let state = fwm_output_state(&scenario.chain)?;
    let (np, nc) = state.mean_fluxes();
    let total = np + nc;
    let modulation = scenario.difference_modulation_flux()?;
    if !(modulation > 0.0) {
        return Err(Error::Calibration(
            "difference channel carries no modulation with these splitter signs".into(),
        ));
    }
    let kappa = (2.0 * total).sqrt() / (modulation * target);
    let field = scenario.drive.peak_field().max(target);
    let angle = kappa * field;
    if angle >= SMALL_ANGLE_LIMIT {
        return Err(Error::Calibration(format!(
            "calibrated gain {kappa:.3e} rad/T would rotate by {angle:.3e} rad at {field:.3e} T, \
             beyond the small-angle limit {SMALL_ANGLE_LIMIT}"
        )));
    }
    Ok(kappa)
}

/// Streaming realization of a scenario. Sample `i` depends only on the
/// scenario and `i`, so any range can be produced independently.
#[derive(Debug, Clone)]
pub struct TraceSynthesizer {
    len: usize,
    sample_rate: f64,
    seed: u64,
    drive: FieldDrive,
    rotation_gain: f64,
    sign_p: f64,
    sign_c: f64,
    mean_p: f64,
    mean_c: f64,
    // Cholesky factor of the per-sample (probe, conjugate) count covariance.
    l11: f64,
    l21: f64,
    l22: f64,
    classical_sd: f64,
    snl: SnlReference,
}

impl TraceSynthesizer {
    pub fn new(scenario: &MagnetometerScenario) -> Result<Self> {
        scenario.validate()?;
        let peak = scenario.rotation_gain * scenario.drive.peak_field();
        if peak >= LINEAR_RANGE_LIMIT {
            return Err(Error::OutOfLinearRange {
                max_angle: peak,
                limit: LINEAR_RANGE_LIMIT,
            });
        }
        let stats = scenario.number_statistics()?;
        let dt = 1.0 / scenario.sample_rate;
        // Analyzer port at 45° passes half the mean flux.
        let scale = 0.5 * dt;
        let (a, b, c) = (stats.var_np * scale, stats.var_nc * scale, stats.cov_npnc * scale);
        let tol = 1e-9 * (a.abs() + b.abs()).max(f64::MIN_POSITIVE);
        if a < -tol || b < -tol || c * c > a * b + tol * (a + b) {
            return Err(Error::domain(format!(
                "non-physical count covariance [[{a}, {c}], [{c}, {b}]]"
            )));
        }
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { c / l11 } else { 0.0 };
        let l22 = (b - l21 * l21).max(0.0).sqrt();
        let mean_p = stats.mean_np * scale;
        let mean_c = stats.mean_nc * scale;
        let snl = SnlReference {
            probe: mean_p,
            conjugate: mean_c,
            difference: mean_p + mean_c,
        };
        Ok(Self {
            len: scenario.num_samples(),
            sample_rate: scenario.sample_rate,
            seed: scenario.rng_seed,
            drive: scenario.drive,
            rotation_gain: scenario.rotation_gain,
            sign_p: scenario.pbs_sign_probe.value(),
            sign_c: scenario.pbs_sign_conjugate.value(),
            mean_p,
            mean_c,
            l11,
            l21,
            l22,
            classical_sd: (scenario.classical_noise_rel_snl * snl.difference).sqrt(),
            snl,
        })
    }

    fn fill(&self, start: usize, probe: &mut [f64], conj: &mut [f64], diff: &mut [f64]) {
        let mut quantum = NormalStream::at(self.seed, QUANTUM_STREAM, start as u64);
        let mut classical = (self.classical_sd > 0.0)
            .then(|| NormalStream::at(self.seed, CLASSICAL_STREAM, start as u64));
        let dt = 1.0 / self.sample_rate;
        let d = &self.drive;
        // sine by rotation, re-anchored at fixed absolute indices so any split gives the same values
        let (step_s, step_c) = (2.0 * PI * (d.ac_frequency * dt).fract()).sin_cos();
        let (mut s, mut c) = (0.0, 1.0);
        for k in 0..probe.len() {
            let n = start + k;
            if k == 0 || n.is_multiple_of(DRIVE_ANCHOR) {
                (s, c) = d.phase_at(n as f64 * dt).sin_cos();
            }
            let theta = self.rotation_gain * (d.dc_field + d.ac_amplitude * s);
            (s, c) = (s * step_c + c * step_s, c * step_c - s * step_s);
            let (z0, z1) = quantum.next_pair();
            let common = match classical.as_mut() {
                Some(g) => self.classical_sd * g.next_pair().0,
                None => 0.0,
            };
            let p = self.mean_p * (1.0 + 2.0 * self.sign_p * theta) + self.l11 * z0 + common;
            let c_out = self.mean_c * (1.0 + 2.0 * self.sign_c * theta)
                + (self.l21 * z0 + self.l22 * z1)
                + common;
            probe[k] = p;
            conj[k] = c_out;
            diff[k] = p - c_out;
        }
    }

    /// Materializes the full trace, generated in parallel chunks.
    pub fn materialize(&self) -> PhotocurrentTraces {
        let mut block = TraceBlock::with_len(self.len);
        block
            .probe
            .par_chunks_mut(SYNTH_CHUNK)
            .zip(block.conjugate.par_chunks_mut(SYNTH_CHUNK))
            .zip(block.difference.par_chunks_mut(SYNTH_CHUNK))
            .enumerate()
            .for_each(|(i, ((p, c), d))| self.fill(i * SYNTH_CHUNK, p, c, d));
        PhotocurrentTraces {
            probe: block.probe,
            conjugate: block.conjugate,
            difference: block.difference,
            sample_rate: self.sample_rate,
            snl: self.snl,
            provenance: self.provenance(),
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            rng_seed: self.seed,
            generator_version: GENERATOR_VERSION.to_string(),
        }
    }
}

impl TraceSource for TraceSynthesizer {
    fn len(&self) -> usize {
        self.len
    }

    fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    fn snl(&self) -> SnlReference {
        self.snl
    }

    fn read(&self, start: usize, block: &mut TraceBlock) -> Result<()> {
        let end = start + block.len();
        if end > self.len {
            return Err(Error::Configuration(format!(
                "read of samples {start}..{end} past trace end {}",
                self.len
            )));
        }
        let TraceBlock {
            probe,
            conjugate,
            difference,
        } = block;
        self.fill(start, probe, conjugate, difference);
        Ok(())
    }
}

/// Signal plus quantum-correlated and classical common-mode noise, sampled
/// at the scenario rate. Deterministic for a fixed seed.
pub fn synthesize_traces(scenario: &MagnetometerScenario) -> Result<PhotocurrentTraces> {
    Ok(TraceSynthesizer::new(scenario)?.materialize())
}
