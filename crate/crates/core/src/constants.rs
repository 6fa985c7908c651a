use crate::scalar::Real;

// CODATA exact SI values.
const HBAR: f64 = 1.054_571_817e-34;
const E_CHARGE: f64 = 1.602_176_634e-19;
const K_B: f64 = 1.380_649e-23;
const MU_0: f64 = 1.256_637_062_12e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants<T> {
    /// hbar / 2e
    pub reduced_flux_quantum: T,
    pub flux_quantum: T,
    pub boltzmann: T,
    pub reduced_planck: T,
    pub vacuum_permeability: T,
    pub electron_charge: T,
}

impl<T: Real> PhysicalConstants<T> {
    pub fn si() -> Self {
        let phi0 = HBAR / (2.0 * E_CHARGE);
        Self {
            reduced_flux_quantum: T::lit(phi0),
            flux_quantum: T::lit(phi0) * T::TAU(),
            boltzmann: T::lit(K_B),
            reduced_planck: T::lit(HBAR),
            vacuum_permeability: T::lit(MU_0),
            electron_charge: T::lit(E_CHARGE),
        }
    }
}

impl<T: Real> Default for PhysicalConstants<T> {
    fn default() -> Self {
        Self::si()
    }
}

pub fn reduced_flux_quantum<T: Real>() -> T {
    PhysicalConstants::<T>::si().reduced_flux_quantum
}

pub fn flux_quantum<T: Real>() -> T {
    PhysicalConstants::<T>::si().flux_quantum
}

pub fn hbar<T: Real>() -> T {
    T::lit(HBAR)
}

pub fn boltzmann<T: Real>() -> T {
    T::lit(K_B)
}

pub fn electron_charge<T: Real>() -> T {
    T::lit(E_CHARGE)
}

pub fn mu0<T: Real>() -> T {
    T::lit(MU_0)
}
