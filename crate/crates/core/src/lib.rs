//! Simulator for a superconducting circulator built from frequency conversion
//! and delay: ideal phasor algebra, harmonic-balance scattering of the
//! flux-modulated bridge network, a nonlinear transient oracle, tune-up, and
//! the engineering budgets that go with the device.
//!
//! Formula code is generic over [`Real`] (`f32` or `f64`). The network
//! solvers work in `f64` only; the aliases below fix the scalar for callers
//! that do not care.

pub mod acceptance;
pub mod analysis;
pub mod budgets;
pub mod config;
pub mod constants;
pub mod device;
pub mod error;
pub mod experiments;
pub mod floquet;
pub mod network;
pub mod phasor;
pub mod report;
pub mod scalar;
pub mod search;
pub mod special;
pub mod transient;
pub mod tuneup;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Complex = num_complex::Complex<f64>;

pub type PhysicalConstants = constants::PhysicalConstants<f64>;
pub type SquidArraySpec = device::SquidArraySpec<f64>;
pub type FluxControl = device::FluxControl<f64>;
pub type CircuitParams = device::CircuitParams<f64>;
pub type SpectralSignal = phasor::SpectralSignal<f64>;
pub type ArmConfig = phasor::ArmConfig<f64>;
pub type NormalMetalFilm = budgets::NormalMetalFilm<f64>;
pub type CryostatStage = budgets::CryostatStage<f64>;

pub type CircuitParams32 = device::CircuitParams<f32>;
pub type SpectralSignal32 = phasor::SpectralSignal<f32>;
