//! Device parameters and the closed-form bridge and resonator formulas.

use serde::{Deserialize, Serialize};

use crate::constants::{flux_quantum, reduced_flux_quantum};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{bessel_j0, bessel_j1};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquidArraySpec<T> {
    pub n_squids: u32,
    /// Critical current of each junction (A).
    pub junction_critical_current: T,
}

impl<T: Real> SquidArraySpec<T> {
    pub fn new(n_squids: u32, junction_critical_current: T) -> Result<Self> {
        let s = Self { n_squids, junction_critical_current };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_squids < 1 {
            return Err(Error::domain("SQUID array needs at least one SQUID"));
        }
        if !(self.junction_critical_current > T::zero()) {
            return Err(Error::domain("junction critical current must be positive"));
        }
        Ok(())
    }

    /// Array inductance at zero flux, N * phi0 / (2 I0).
    pub fn zero_flux_inductance(&self) -> T {
        T::lit(self.n_squids as f64) * reduced_flux_quantum::<T>() / (T::lit(2.0) * self.junction_critical_current)
    }

    /// Flux scale of the collective array phase, N * phi0.
    pub fn phase_flux_scale(&self) -> T {
        T::lit(self.n_squids as f64) * reduced_flux_quantum::<T>()
    }
}

impl Default for SquidArraySpec<f64> {
    fn default() -> Self {
        // 2 uA makes a 12-SQUID array come out at ~1 nH
        Self { n_squids: 12, junction_critical_current: 2e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxControl<T> {
    /// Uniform flux through every SQUID (Wb).
    pub uniform_flux: T,
    /// Amplitude of the gradiometric drive (Wb).
    pub gradiometric_amplitude: T,
    /// Gradiometric drive frequency (rad/s).
    pub drive_frequency: T,
    /// Relative phase between the two bias-line pairs (rad).
    pub drive_phase_offset: T,
}

impl<T: Real> FluxControl<T> {
    /// Convenience constructor with fluxes in units of the flux quantum.
    pub fn in_flux_quanta(uniform: T, gradiometric: T, drive_frequency: T, phase: T) -> Self {
        let f0 = flux_quantum::<T>();
        Self {
            uniform_flux: uniform * f0,
            gradiometric_amplitude: gradiometric * f0,
            drive_frequency,
            drive_phase_offset: phase,
        }
    }

    /// Beyond |Phi_u| + |Phi_g| = Phi0/2 a larger drive balances the bridges
    /// instead of imbalancing them and the lumped model no longer applies.
    pub fn within_model_range(&self) -> bool {
        let half = flux_quantum::<T>() / T::lit(2.0);
        self.uniform_flux.abs() + self.gradiometric_amplitude.abs() < half
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.drive_frequency >= T::zero()) {
            return Err(Error::domain("drive frequency must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams<T> {
    pub l0: T,
    /// Per-inductor imbalance amplitude.
    pub delta0: T,
    pub c: T,
    pub z0: T,
    /// Modulation frequency (rad/s).
    pub omega: T,
    pub phi: T,
    /// Geometric inductance in series with every array.
    pub lg: T,
    /// Internal quality factor of the resonators; infinite means lossless.
    pub q_int: T,
    /// Normal-metal resistance in series with every array.
    pub r_au: T,
}

impl<T: Real> CircuitParams<T> {
    pub fn lossless(l0: T, delta0: T, c: T, z0: T, omega: T, phi: T) -> Self {
        Self { l0, delta0, c, z0, omega, phi, lg: T::zero(), q_int: T::infinity(), r_au: T::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta0.abs() < T::one()) {
            return Err(Error::domain("bridge imbalance out of range"));
        }
        if !(self.l0 > T::zero() && self.c > T::zero() && self.z0 > T::zero()) {
            return Err(Error::domain("l0, c and Z0 must be positive"));
        }
        if !(self.lg >= T::zero()) || !(self.r_au >= T::zero()) {
            return Err(Error::domain("series inductance and resistance must be non-negative"));
        }
        if !(self.q_int > T::zero()) {
            return Err(Error::domain("internal Q must be positive"));
        }
        if !(self.omega >= T::zero()) {
            return Err(Error::domain("modulation frequency must be non-negative"));
        }
        Ok(())
    }

    pub fn is_lossless(&self) -> bool {
        self.q_int.is_infinite() && self.r_au == T::zero()
    }
}

impl Default for CircuitParams<f64> {
    fn default() -> Self {
        Self::lossless(1e-9, 0.0, 1e-12, 50.0, std::f64::consts::TAU * 120e6, std::f64::consts::FRAC_PI_2)
    }
}

/// Inductance of an N-SQUID array, N (phi0 / 2 I0) |sec(Phi / 2 phi0)|.
pub fn squid_array_inductance<T: Real>(spec: &SquidArraySpec<T>, flux: T) -> Result<T> {
    spec.validate()?;
    let x = flux / (T::lit(2.0) * reduced_flux_quantum::<T>());
    let cs = x.cos();
    // within a few ulps of the pole the value is meaningless
    if cs.abs() <= T::lit(64.0) * T::epsilon() {
        return Err(Error::domain("flux at inductance divergence"));
    }
    Ok(spec.zero_flux_inductance() / cs.abs())
}

/// Maps uniform and gradiometric flux to the bridge's base inductance and
/// imbalance amplitude. The drive frequency and phase play no role here.
pub fn flux_to_bridge_params<T: Real>(fc: &FluxControl<T>, spec: &SquidArraySpec<T>) -> Result<(T, T)> {
    spec.validate()?;
    let f0 = flux_quantum::<T>();
    let alpha = T::PI() * fc.uniform_flux / f0;
    let beta = T::PI() * fc.gradiometric_amplitude / f0;
    if !(alpha.abs() < T::FRAC_PI_2()) {
        return Err(Error::domain("uniform flux at inductance pole"));
    }
    let ca = alpha.cos();
    if ca <= T::lit(64.0) * T::epsilon() {
        return Err(Error::domain("uniform flux at inductance pole"));
    }
    let j0 = bessel_j0(beta)?;
    let j1 = bessel_j1(beta)?;
    if j0.abs() <= T::epsilon() {
        return Err(Error::domain("gradiometric flux at Bessel zero"));
    }
    let delta0 = -T::lit(2.0) * alpha.tan() * j1 / j0;
    let l0 = spec.zero_flux_inductance() / (ca * j0);
    Ok((l0, delta0))
}

/// l+- = l0 / (1 +- delta).
pub fn bridge_inductances<T: Real>(l0: T, delta: T) -> Result<(T, T)> {
    if !(delta.abs() < T::one()) {
        return Err(Error::domain("bridge imbalance out of range"));
    }
    Ok((l0 / (T::one() + delta), l0 / (T::one() - delta)))
}

/// Centre of the resonant delay, sqrt((4 - delta0^2) / (2 l0 c)).
pub fn resonant_frequency<T: Real>(p: &CircuitParams<T>) -> Result<T> {
    p.validate()?;
    Ok(((T::lit(4.0) - p.delta0 * p.delta0) / (T::lit(2.0) * p.l0 * p.c)).sqrt())
}

/// Duration of the resonant delay, about 8 Z0 c / delta0^2.
pub fn resonant_delay_duration<T: Real>(p: &CircuitParams<T>) -> Result<T> {
    p.validate()?;
    if p.delta0 == T::zero() {
        return Err(Error::domain("undercoupled: delay diverges"));
    }
    Ok(T::lit(8.0) * p.z0 * p.c / (p.delta0 * p.delta0))
}
