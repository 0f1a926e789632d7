//! Gaussian-state model of a seeded four-wave-mixing source.
//!
//! The probe seed is a bright coherent state and the conjugate input is
//! vacuum. The mixer acts as the two-mode squeezer
//!
//! ```text
//! b_p = √G a_p + √(G−1) a_c†
//! b_c = √G a_c + √(G−1) a_p†
//! ```
//!
//! followed by independent beam-splitter loss on each arm. Quadratures are
//! ordered `(x_p, p_p, x_c, p_c)` with `x = (a + a†)/√2`, so vacuum variance
//! is 1/2. Mean amplitudes are in √(photons/s), which makes `|α|²` a photon
//! flux and photon-number shot noise equal to that flux.

use nalgebra::{Complex, Matrix2, Matrix4, SMatrix, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squeezer gain and per-arm transmissions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwmChain {
    /// Power gain G ≥ 1 of the seeded probe.
    pub gain: f64,
    pub eta_probe: f64,
    pub eta_conjugate: f64,
    /// Mean photon flux of the probe seed, photons/s.
    pub seed_photon_flux: f64,
}

impl FwmChain {
    pub fn new(gain: f64, eta_probe: f64, eta_conjugate: f64, seed_photon_flux: f64) -> Result<Self> {
        let c = Self {
            gain,
            eta_probe,
            eta_conjugate,
            seed_photon_flux,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 1.0 && self.gain.is_finite()) {
            return Err(Error::domain(format!("gain must be >= 1, got {}", self.gain)));
        }
        for (name, eta) in [("eta_probe", self.eta_probe), ("eta_conjugate", self.eta_conjugate)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::domain(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        if !(self.seed_photon_flux > 0.0 && self.seed_photon_flux.is_finite()) {
            return Err(Error::domain(format!(
                "seed photon flux must be positive, got {}",
                self.seed_photon_flux
            )));
        }
        Ok(())
    }

    /// Mean photon fluxes (probe, conjugate) leaving the mixer, before loss.
    pub fn generated_fluxes(&self) -> (f64, f64) {
        (
            self.gain * self.seed_photon_flux,
            (self.gain - 1.0) * self.seed_photon_flux,
        )
    }

    /// Mean photon fluxes (probe, conjugate) after arm losses.
    pub fn detected_fluxes(&self) -> (f64, f64) {
        let (np, nc) = self.generated_fluxes();
        (self.eta_probe * np, self.eta_conjugate * nc)
    }
}

/// Two-mode Gaussian state: complex mean amplitudes and the 4×4 quadrature
/// covariance in shot-noise units (vacuum = I/2).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeGaussianState {
    /// Mean amplitudes `[α_probe, α_conjugate]`, √(photons/s).
    pub means: [Complex<f64>; 2],
    pub covariance: Matrix4<f64>,
}

/// Symplectic form Ω for quadrature ordering `(x_p, p_p, x_c, p_c)`.
pub fn symplectic_form() -> Matrix4<f64> {
    let mut omega = Matrix4::zeros();
    omega[(0, 1)] = 1.0;
    omega[(1, 0)] = -1.0;
    omega[(2, 3)] = 1.0;
    omega[(3, 2)] = -1.0;
    omega
}

impl TwoModeGaussianState {
    pub fn vacuum() -> Self {
        Self {
            means: [Complex::new(0.0, 0.0); 2],
            covariance: Matrix4::identity() * 0.5,
        }
    }

    pub fn coherent(probe: Complex<f64>, conjugate: Complex<f64>) -> Self {
        Self {
            means: [probe, conjugate],
            covariance: Matrix4::identity() * 0.5,
        }
    }

    /// Quadrature means `(⟨x_p⟩, ⟨p_p⟩, ⟨x_c⟩, ⟨p_c⟩)`.
    pub fn quadrature_means(&self) -> [f64; 4] {
        let s = std::f64::consts::SQRT_2;
        [
            s * self.means[0].re,
            s * self.means[0].im,
            s * self.means[1].re,
            s * self.means[1].im,
        ]
    }

    /// Mean photon fluxes `|α|²` per mode.
    pub fn mean_fluxes(&self) -> (f64, f64) {
        (self.means[0].norm_sqr(), self.means[1].norm_sqr())
    }

    /// Applies the two-mode squeezer with power gain `gain` (cosh²r = G).
    pub fn apply_two_mode_squeezer(&self, gain: f64) -> Result<Self> {
        if !(gain >= 1.0 && gain.is_finite()) {
            return Err(Error::domain(format!("gain must be >= 1, got {gain}")));
        }
        let c = gain.sqrt();
        let s = (gain - 1.0).sqrt();
        #[rustfmt::skip]
        let symplectic = Matrix4::new(
            c,   0.0, s,   0.0,
            0.0, c,   0.0, -s,
            s,   0.0, c,   0.0,
            0.0, -s,  0.0, c,
        );
        let [ap, ac] = self.means;
        Ok(Self {
            means: [ap * c + ac.conj() * s, ac * c + ap.conj() * s],
            covariance: symplectic * self.covariance * symplectic.transpose(),
        })
    }

    /// Mixes each arm with vacuum on a beam splitter of transmission η.
    pub fn apply_loss(&self, eta_probe: f64, eta_conjugate: f64) -> Result<Self> {
        for eta in [eta_probe, eta_conjugate] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::domain(format!("transmission must lie in [0, 1], got {eta}")));
            }
        }
        let (tp, tc) = (eta_probe.sqrt(), eta_conjugate.sqrt());
        let scale = Matrix4::from_diagonal(&nalgebra::Vector4::new(tp, tp, tc, tc));
        let added = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            0.5 * (1.0 - eta_probe),
            0.5 * (1.0 - eta_probe),
            0.5 * (1.0 - eta_conjugate),
            0.5 * (1.0 - eta_conjugate),
        ));
        Ok(Self {
            means: [self.means[0] * tp, self.means[1] * tc],
            covariance: scale * self.covariance * scale + added,
        })
    }

    /// Smallest eigenvalue of `V + (i/2)Ω`. Non-negative for physical states.
    pub fn min_uncertainty_eigenvalue(&self) -> f64 {
        // Hermitian H = A + iB embeds as the real symmetric [[A, −B], [B, A]],
        // whose spectrum is that of H with each eigenvalue doubled.
        let a = self.covariance;
        let b = symplectic_form() * 0.5;
        let mut m = SMatrix::<f64, 8, 8>::zeros();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
        m.fixed_view_mut::<4, 4>(0, 4).copy_from(&(-b));
        m.fixed_view_mut::<4, 4>(4, 0).copy_from(&b);
        m.fixed_view_mut::<4, 4>(4, 4).copy_from(&a);
        SymmetricEigen::new(m).eigenvalues.min()
    }

    /// Checks symmetry and the uncertainty relation `V + (i/2)Ω ⪰ 0`.
    pub fn is_physical(&self, tol: f64) -> bool {
        let v = &self.covariance;
        let asym = (v - v.transpose()).abs().max();
        asym <= tol && self.min_uncertainty_eigenvalue() >= -tol
    }
}

/// Output state of the seeded mixer followed by arm losses.
pub fn fwm_output_state(chain: &FwmChain) -> Result<TwoModeGaussianState> {
    chain.validate()?;
    let seed = Complex::new(chain.seed_photon_flux.sqrt(), 0.0);
    TwoModeGaussianState::coherent(seed, Complex::new(0.0, 0.0))
        .apply_two_mode_squeezer(chain.gain)?
        .apply_loss(chain.eta_probe, chain.eta_conjugate)
}

/// Linearized photon-number statistics of the two modes. Variances and the
/// covariance are spectral densities per unit bandwidth, so a coherent beam
/// of flux N has variance N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumberStatistics {
    pub mean_np: f64,
    pub mean_nc: f64,
    pub var_np: f64,
    pub var_nc: f64,
    pub cov_npnc: f64,
    /// Set when the probe has zero mean field; its linearized fluctuation is zero.
    pub dark_probe: bool,
    pub dark_conjugate: bool,
}

impl NumberStatistics {
    /// Coherent light of the given fluxes: Poissonian, uncorrelated.
    pub fn shot_noise_limited(mean_np: f64, mean_nc: f64) -> Self {
        Self {
            mean_np,
            mean_nc,
            var_np: mean_np,
            var_nc: mean_nc,
            cov_npnc: 0.0,
            dark_probe: mean_np == 0.0,
            dark_conjugate: mean_nc == 0.0,
        }
    }

    pub fn difference_variance(&self) -> f64 {
        self.var_np + self.var_nc - 2.0 * self.cov_npnc
    }

    pub fn covariance_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.var_np, self.cov_npnc, self.cov_npnc, self.var_nc)
    }
}

/// Projects quadrature fluctuations onto the mean-field direction:
/// `δn ≈ √2·|α|·δx_φ` with φ the phase of α.
pub fn photon_number_covariance(state: &TwoModeGaussianState) -> NumberStatistics {
    let v = &state.covariance;
    let mut weights = [Vector2::zeros(), Vector2::zeros()];
    let mut dark = [false, false];
    for (j, alpha) in state.means.iter().enumerate() {
        let amp = alpha.norm();
        if amp == 0.0 {
            dark[j] = true;
        } else {
            let phase = alpha.arg();
            weights[j] = Vector2::new(phase.cos(), phase.sin()) * (std::f64::consts::SQRT_2 * amp);
        }
    }
    let block = |r: usize, c: usize| v.fixed_view::<2, 2>(2 * r, 2 * c).into_owned();
    let (np, nc) = state.mean_fluxes();
    NumberStatistics {
        mean_np: np,
        mean_nc: nc,
        var_np: weights[0].dot(&(block(0, 0) * weights[0])),
        var_nc: weights[1].dot(&(block(1, 1) * weights[1])),
        cov_npnc: weights[0].dot(&(block(0, 1) * weights[1])),
        dark_probe: dark[0],
        dark_conjugate: dark[1],
    }
}

/// `Var(n_p − n_c) / (⟨n_p⟩ + ⟨n_c⟩)` from the linearized covariance.
/// Values below 1 are intensity-difference squeezing.
pub fn intensity_difference_noise_ratio(state: &TwoModeGaussianState) -> Result<f64> {
    let stats = photon_number_covariance(state);
    let total = stats.mean_np + stats.mean_nc;
    if !(total > 0.0) {
        return Err(Error::domain("zero total mean flux: noise ratio undefined"));
    }
    Ok(stats.difference_variance() / total)
}

/// Closed-form noise ratio for equal arm transmissions: `1 − η + η/(2G − 1)`.
pub fn noise_ratio_equal_arms(gain: f64, eta: f64) -> Result<f64> {
    if !(gain >= 1.0 && gain.is_finite()) {
        return Err(Error::domain(format!("gain must be >= 1, got {gain}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("transmission must lie in [0, 1], got {eta}")));
    }
    Ok(1.0 - eta + eta / (2.0 * gain - 1.0))
}

pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

// Accepts inputs rounded to 0.01 dB at the ideal limit.
const EFFICIENCY_SLACK: f64 = 1e-4;

/// Equal-arm transmission that reproduces a measured squeezing level (dB,
/// negative for squeezing) at gain `gain`.
pub fn infer_efficiency(measured_squeezing_db: f64, gain: f64) -> Result<f64> {
    if !measured_squeezing_db.is_finite() || measured_squeezing_db > 0.0 {
        return Err(Error::domain(format!(
            "squeezing must be <= 0 dB, got {measured_squeezing_db}"
        )));
    }
    if !(gain > 1.0 && gain.is_finite()) {
        return Err(Error::domain(format!("gain must be > 1, got {gain}")));
    }
    // 1 − η + η/(2G−1) = r is linear in η.
    let r = from_db(measured_squeezing_db);
    let eta = (1.0 - r) / (1.0 - 1.0 / (2.0 * gain - 1.0));
    if eta > 1.0 + EFFICIENCY_SLACK {
        return Err(Error::Infeasible(format!(
            "{measured_squeezing_db} dB is deeper than the {:.3} dB lossless limit at G = {gain}",
            to_db(1.0 / (2.0 * gain - 1.0))
        )));
    }
    Ok(eta.clamp(0.0, 1.0))
}
