//! Physical constants and closed-form atomic relations: Larmor precession,
//! generalized Rabi frequency and rubidium vapor density.
//!
//! Angular frequencies are radian/second throughout. Conversion from hertz
//! happens at the CLI/config boundary.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Fundamental constants (CODATA 2018 exact/recommended values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Elementary charge, C.
    pub electron_charge: f64,
    /// Electron mass, kg.
    pub electron_mass: f64,
    /// Reduced Planck constant, J·s.
    pub reduced_planck: f64,
    /// Planck constant, J·s.
    pub planck: f64,
    /// Speed of light, m/s.
    pub speed_of_light: f64,
    /// Boltzmann constant, J/K.
    pub boltzmann: f64,
}

pub const CODATA: PhysicalConstants = PhysicalConstants {
    electron_charge: 1.602_176_634e-19,
    electron_mass: 9.109_383_701_5e-31,
    reduced_planck: 1.054_571_817e-34,
    planck: 6.626_070_15e-34,
    speed_of_light: 299_792_458.0,
    boltzmann: 1.380_649e-23,
};

impl Default for PhysicalConstants {
    fn default() -> Self {
        CODATA
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LarmorParams {
    pub lande_g: f64,
    /// Field along the propagation axis, T. Sign gives direction.
    pub field: f64,
}

impl LarmorParams {
    pub fn new(lande_g: f64, field: f64) -> Result<Self> {
        if !lande_g.is_finite() || lande_g == 0.0 {
            return Err(Error::domain(format!(
                "Landé factor must be finite and nonzero, got {lande_g}"
            )));
        }
        if !field.is_finite() {
            return Err(Error::domain(format!("field must be finite, got {field}")));
        }
        Ok(Self { lande_g, field })
    }
}

/// Larmor angular frequency `e·g·B / 2m`, rad/s.
pub fn larmor_frequency(p: &LarmorParams, c: &PhysicalConstants) -> Result<f64> {
    let p = LarmorParams::new(p.lande_g, p.field)?;
    Ok(c.electron_charge * p.lande_g * p.field / (2.0 * c.electron_mass))
}

/// Inverse of [`larmor_frequency`]: the field giving angular frequency `omega`.
pub fn field_for_larmor(omega: f64, lande_g: f64, c: &PhysicalConstants) -> Result<f64> {
    if !omega.is_finite() {
        return Err(Error::domain(format!(
            "angular frequency must be finite, got {omega}"
        )));
    }
    if !lande_g.is_finite() || lande_g == 0.0 {
        return Err(Error::domain(format!(
            "Landé factor must be finite and nonzero, got {lande_g}"
        )));
    }
    Ok(2.0 * c.electron_mass * omega / (c.electron_charge * lande_g))
}

pub fn hz_to_angular(f: f64) -> f64 {
    2.0 * PI * f
}

pub fn angular_to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiParams {
    /// Resonant Rabi frequency Ω0, rad/s.
    pub resonant_rabi: f64,
    /// Detuning Δ, rad/s.
    pub detuning: f64,
    /// Optional transition dipole element d, C·m.
    pub dipole_element: Option<f64>,
    /// Optional optical field amplitude E0, V/m.
    pub field_amplitude: Option<f64>,
}

impl RabiParams {
    pub fn new(resonant_rabi: f64, detuning: f64) -> Result<Self> {
        let p = Self {
            resonant_rabi,
            detuning,
            dipole_element: None,
            field_amplitude: None,
        };
        p.validate(&CODATA)?;
        Ok(p)
    }

    /// Builds Ω0 from d·E0/ħ and keeps d and E0 for the record.
    pub fn from_dipole(
        dipole_element: f64,
        field_amplitude: f64,
        detuning: f64,
        c: &PhysicalConstants,
    ) -> Result<Self> {
        let resonant_rabi = rabi_from_dipole(dipole_element, field_amplitude, c)?;
        let p = Self {
            resonant_rabi,
            detuning,
            dipole_element: Some(dipole_element),
            field_amplitude: Some(field_amplitude),
        };
        p.validate(c)?;
        Ok(p)
    }

    pub fn validate(&self, c: &PhysicalConstants) -> Result<()> {
        if !self.resonant_rabi.is_finite() || self.resonant_rabi < 0.0 {
            return Err(Error::domain(format!(
                "resonant Rabi frequency must be finite and >= 0, got {}",
                self.resonant_rabi
            )));
        }
        if !self.detuning.is_finite() {
            return Err(Error::domain(format!(
                "detuning must be finite, got {}",
                self.detuning
            )));
        }
        if let (Some(d), Some(e0)) = (self.dipole_element, self.field_amplitude) {
            let expected = d * e0 / c.reduced_planck;
            let scale = expected.abs().max(self.resonant_rabi.abs());
            if scale > 0.0 && (expected - self.resonant_rabi).abs() > 1e-9 * scale {
                return Err(Error::domain(format!(
                    "resonant Rabi frequency {} inconsistent with d·E0/ħ = {}",
                    self.resonant_rabi, expected
                )));
            }
        }
        Ok(())
    }
}

/// Generalized Rabi frequency `sqrt(Ω0² + Δ²)`, rad/s.
pub fn generalized_rabi(p: &RabiParams) -> Result<f64> {
    if !p.resonant_rabi.is_finite() || p.resonant_rabi < 0.0 {
        return Err(Error::domain(format!(
            "resonant Rabi frequency must be finite and >= 0, got {}",
            p.resonant_rabi
        )));
    }
    if !p.detuning.is_finite() {
        return Err(Error::domain(format!(
            "detuning must be finite, got {}",
            p.detuning
        )));
    }
    Ok(p.resonant_rabi.hypot(p.detuning))
}

/// Resonant Rabi frequency `d·E0/ħ`, rad/s.
pub fn rabi_from_dipole(dipole: f64, field_amplitude: f64, c: &PhysicalConstants) -> Result<f64> {
    if !(dipole >= 0.0 && dipole.is_finite()) {
        return Err(Error::domain(format!(
            "dipole element must be finite and >= 0, got {dipole}"
        )));
    }
    if !(field_amplitude >= 0.0 && field_amplitude.is_finite()) {
        return Err(Error::domain(format!(
            "field amplitude must be finite and >= 0, got {field_amplitude}"
        )));
    }
    Ok(dipole * field_amplitude / c.reduced_planck)
}

// Rubidium saturated vapor pressure, log10(P / torr) as a function of T / K.
// Solid below the melting point, liquid above (Nesmeyanov fits as tabulated
// in Steck's rubidium D-line data).
const RB_MELTING_POINT_K: f64 = 312.46;
const RB_SOLID: [f64; 4] = [-94.04826, -1961.258, -0.03771687, 42.57526];
const RB_LIQUID: [f64; 4] = [15.88253, -4529.635, 0.00058663, -2.99138];
const TORR_TO_PA: f64 = 101_325.0 / 760.0;

pub const RB_DENSITY_T_MIN: f64 = 250.0;
pub const RB_DENSITY_T_MAX: f64 = 500.0;

/// Saturated rubidium vapor pressure in pascal.
pub fn rb_vapor_pressure(temperature: f64) -> Result<f64> {
    check_rb_temperature(temperature)?;
    let [a, b, c, d] = if temperature < RB_MELTING_POINT_K {
        RB_SOLID
    } else {
        RB_LIQUID
    };
    let log10_torr = a + b / temperature + c * temperature + d * temperature.log10();
    Ok(10f64.powf(log10_torr) * TORR_TO_PA)
}

/// Rubidium number density in cm⁻³ from the saturated vapor pressure and the
/// ideal-gas law. Valid for 250 K ≤ T ≤ 500 K.
pub fn rb_vapor_density(temperature: f64) -> Result<f64> {
    let pressure = rb_vapor_pressure(temperature)?;
    let per_m3 = pressure / (CODATA.boltzmann * temperature);
    Ok(per_m3 * 1e-6)
}

fn check_rb_temperature(t: f64) -> Result<()> {
    if !(RB_DENSITY_T_MIN..=RB_DENSITY_T_MAX).contains(&t) {
        return Err(Error::domain(format!(
            "temperature {t} K outside correlation range [{RB_DENSITY_T_MIN}, {RB_DENSITY_T_MAX}] K"
        )));
    }
    Ok(())
}

/// Photon flux (photons/s) of a beam of `power` watts at `wavelength` meters.
pub fn photon_flux(power: f64, wavelength: f64, c: &PhysicalConstants) -> Result<f64> {
    if !(power > 0.0 && power.is_finite()) || !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::domain(format!(
            "power and wavelength must be positive, got {power} W, {wavelength} m"
        )));
    }
    Ok(power * wavelength / (c.planck * c.speed_of_light))
}
