//! Run configuration: a TOML file with `device`, `solver`, `experiment` and
//! `output` tables. Every key has a default, unknown keys are rejected.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::Circulation;
use crate::constants::flux_quantum;
use crate::error::{Error, Result};
use crate::network::BiasPairing;
use crate::transient::{JunctionLaw, ModulationLaw, PowerSearch, TransientOptions};
use crate::tuneup::{TuneOptions, Weights};
use crate::{CircuitParams, FluxControl, SquidArraySpec};

pub const EXPERIMENTS: [&str; 11] = [
    "phasor-demo",
    "sweep-sparams",
    "delay-map",
    "phase-map",
    "amp-map",
    "tuneup",
    "spectrum",
    "power-sweep",
    "metadata",
    "noise-budget",
    "accept",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub device: DeviceConfig,
    pub solver: SolverConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    pub n_squids: u32,
    /// A, per junction
    pub junction_critical_current: f64,
    /// F
    pub capacitance: f64,
    /// Ohm
    pub z0: f64,
    /// Hz
    pub modulation_frequency: f64,
    /// H, in series with every array
    pub geometric_inductance: f64,
    /// Absent for a lossless circuit.
    pub internal_q: Option<f64>,
    /// Ohm, in series with every array
    pub series_resistance: f64,
    pub pairing: BiasPairing,
    /// Hz
    pub target_frequency: f64,
    /// Uniform flux for the amplitude map, in flux quanta.
    pub uniform_flux: f64,
    /// Wb/A from the gradiometric bias line into one SQUID.
    pub bias_mutual_inductance: f64,
    /// H, bias-line filter inductor
    pub filter_inductance: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            n_squids: 12,
            junction_critical_current: 2e-6,
            capacitance: 1e-12,
            z0: 50.0,
            modulation_frequency: 120e6,
            geometric_inductance: 0.0,
            internal_q: None,
            series_resistance: 0.0,
            pairing: BiasPairing::Quadrature,
            target_frequency: 4.5e9,
            uniform_flux: 0.38,
            // ~0.09 Phi0 of gradiometric flux at ~100 uA of bias current
            bias_mutual_inductance: 1.6e-12,
            filter_inductance: 20e-9,
        }
    }
}

impl DeviceConfig {
    pub fn spec(&self) -> SquidArraySpec {
        SquidArraySpec { n_squids: self.n_squids, junction_critical_current: self.junction_critical_current }
    }

    /// Circuit at zero flux, phase pi/2; tune-up and the flux maps fill in l0 and delta0.
    pub fn base_circuit(&self) -> CircuitParams {
        CircuitParams {
            l0: self.spec().zero_flux_inductance(),
            delta0: 0.0,
            c: self.capacitance,
            z0: self.z0,
            omega: TAU * self.modulation_frequency,
            phi: FRAC_PI_2,
            lg: self.geometric_inductance,
            q_int: self.internal_q.unwrap_or(f64::INFINITY),
            r_au: self.series_resistance,
        }
    }

    fn validate(&self) -> Result<()> {
        self.spec().validate().map_err(|e| Error::config(format!("device: {e}")))?;
        self.base_circuit().validate().map_err(|e| Error::config(format!("device: {e}")))?;
        if !(self.modulation_frequency > 0.0) {
            return Err(Error::config("device: modulation_frequency must be positive"));
        }
        if !(self.target_frequency > 0.0) {
            return Err(Error::config("device: target_frequency must be positive"));
        }
        if !(self.uniform_flux.abs() < 0.5) {
            return Err(Error::config("device: uniform_flux must lie inside (-0.5, 0.5) flux quanta"));
        }
        if !(self.bias_mutual_inductance > 0.0 && self.filter_inductance >= 0.0) {
            return Err(Error::config("device: bias_mutual_inductance must be positive, filter_inductance non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationChoice {
    #[default]
    FirstHarmonic,
    /// Critical current follows the instantaneous flux of the operating point.
    FluxExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientConfig {
    pub points_per_period: usize,
    pub harmonics: usize,
    pub max_denominator: u32,
    pub settle_cycles: usize,
    pub record_cycles: usize,
    pub max_cycles: usize,
    pub steady_tolerance: f64,
    pub richardson: bool,
    pub junction: JunctionLaw,
    pub modulation: ModulationChoice,
}

impl Default for TransientConfig {
    fn default() -> Self {
        let d = TransientOptions::default();
        Self {
            points_per_period: d.points_per_period,
            harmonics: d.harmonics,
            max_denominator: 8,
            settle_cycles: d.settle_cycles,
            record_cycles: d.record_cycles,
            max_cycles: d.max_cycles,
            steady_tolerance: d.steady_tolerance,
            richardson: d.richardson,
            junction: d.junction,
            modulation: ModulationChoice::FirstHarmonic,
        }
    }
}

impl TransientConfig {
    /// Solver options for an operating point with the given flux bias.
    pub fn options(&self, spec: SquidArraySpec, flux: Option<&FluxControl>) -> TransientOptions {
        let modulation = match (self.modulation, flux) {
            (ModulationChoice::FluxExact, Some(f)) => {
                ModulationLaw::FluxExact { uniform_flux: f.uniform_flux, gradiometric_amplitude: f.gradiometric_amplitude }
            }
            _ => ModulationLaw::FirstHarmonic,
        };
        TransientOptions {
            spec,
            junction: self.junction,
            modulation,
            points_per_period: self.points_per_period,
            harmonics: self.harmonics,
            max_denominator: self.max_denominator,
            settle_cycles: self.settle_cycles,
            record_cycles: self.record_cycles,
            max_cycles: self.max_cycles,
            steady_tolerance: self.steady_tolerance,
            richardson: self.richardson,
            ..TransientOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub weights: Weights,
    /// Hz
    pub sweep_half_width: f64,
    /// Hz
    pub sweep_step: f64,
    pub phase_half_width: f64,
    pub phase_step: f64,
    /// s
    pub delay_floor: Option<f64>,
    pub max_rounds: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        let d = TuneOptions::default();
        Self {
            weights: d.weights,
            sweep_half_width: d.sweep_half_width,
            sweep_step: d.sweep_step,
            phase_half_width: d.phase_half_width,
            phase_step: d.phase_step,
            delay_floor: d.delay_floor,
            max_rounds: d.max_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Sidebands kept on each side of the carrier in harmonic balance.
    pub truncation: usize,
    pub transient: TransientConfig,
    pub power_search: PowerSearch,
    pub tune: TuneConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { truncation: 3, transient: TransientConfig::default(), power_search: PowerSearch::default(), tune: TuneConfig::default() }
    }
}

impl SolverConfig {
    pub fn tune_options(&self, pairing: BiasPairing) -> TuneOptions {
        let t = &self.tune;
        TuneOptions {
            weights: t.weights,
            pairing,
            truncation: self.truncation,
            sweep_half_width: t.sweep_half_width,
            sweep_step: t.sweep_step,
            phase_half_width: t.phase_half_width,
            phase_step: t.phase_step,
            delay_floor: t.delay_floor,
            max_rounds: t.max_rounds,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.truncation < 2 {
            return Err(Error::config("solver: truncation must be at least 2 to resolve the even sidebands"));
        }
        let spec = SquidArraySpec::default();
        self.transient.options(spec, None).validate().map_err(|e| Error::config(format!("solver.transient: {e}")))?;
        let ps = &self.power_search;
        if !(ps.min_power > 0.0 && ps.max_power > ps.min_power && ps.points_per_decade >= 1 && ps.log_tolerance > 0.0 && ps.reference_power > 0.0) {
            return Err(Error::config("solver.power_search: powers must be positive and increasing"));
        }
        let t = &self.tune;
        t.weights.validate().map_err(|e| Error::config(format!("solver.tune: {e}")))?;
        if !(t.sweep_half_width > 0.0 && t.sweep_step > 0.0 && t.sweep_step < t.sweep_half_width) {
            return Err(Error::config("solver.tune: sweep step must be positive and below the half width"));
        }
        if !(t.phase_step > 0.0 && t.phase_half_width >= t.phase_step) {
            return Err(Error::config("solver.tune: phase grid must hold at least three points"));
        }
        if let Some(f) = t.delay_floor {
            if !(f > 0.0) {
                return Err(Error::config("solver.tune: delay_floor must be positive"));
            }
        }
        Ok(())
    }
}

/// Evenly spaced grid, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(start: f64, stop: f64, points: usize) -> Self {
        Self { start, stop, points }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let h = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + i as f64 * h).collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.points == 0 {
            return Err(Error::config(format!("{what}: grid is empty")));
        }
        if !(self.start.is_finite() && self.stop.is_finite() && self.start <= self.stop) {
            return Err(Error::config(format!("{what}: grid needs finite start <= stop")));
        }
        if self.points > 1 && self.start == self.stop {
            return Err(Error::config(format!("{what}: grid of several points has zero width")));
        }
        Ok(())
    }
}

/// Logarithmically spaced grid, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        Grid::new(self.start.log10(), self.stop.log10(), self.points).values().into_iter().map(|x| 10f64.powf(x)).collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.start > 0.0) {
            return Err(Error::config(format!("{what}: logarithmic grid must start above zero")));
        }
        Grid::new(self.start, self.stop, self.points).validate(what)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub direction: Circulation,
    /// Hz, total width of probe sweeps centred on the operating point
    pub probe_span: f64,
    pub probe_points: usize,
    /// rad
    pub phases: Grid,
    /// Uniform fluxes of the delay map, in flux quanta.
    pub delay_map_uniform: Vec<f64>,
    /// Static gradiometric flux of the delay map, in flux quanta.
    pub delay_map_gradiometric: Grid,
    /// Hz
    pub delay_map_frequency: Grid,
    /// Gradiometric drive amplitude of the amplitude map, in flux quanta.
    pub amp_map_gradiometric: Grid,
    /// Hz
    pub amp_map_frequency: Grid,
    /// W
    pub powers: LogGrid,
    /// Hz, operation frequencies of the metadata run
    pub targets: Vec<f64>,
    /// Run the transient power search at every metadata point.
    pub power_handling: bool,
    /// K, temperatures the bias lines are thermalized to
    pub line_temperatures: Vec<f64>,
    /// W; when absent the noise budget computes it with the transient solver
    pub compression_power: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "phasor-demo".to_string(),
            direction: Circulation::Ccw,
            probe_span: 300e6,
            probe_points: 301,
            phases: Grid::new(0.0, TAU, 73),
            delay_map_uniform: vec![0.28, 0.33, 0.38],
            delay_map_gradiometric: Grid::new(-0.1, 0.1, 41),
            delay_map_frequency: Grid::new(3.5e9, 7.0e9, 351),
            amp_map_gradiometric: Grid::new(0.0, 0.11, 23),
            amp_map_frequency: Grid::new(3.7e9, 4.5e9, 161),
            powers: LogGrid { start: 1e-16, stop: 1e-10, points: 13 },
            targets: vec![4.0e9, 4.5e9, 5.0e9, 5.5e9, 6.0e9],
            power_handling: false,
            line_temperatures: vec![300.0, 7.0],
            compression_power: None,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if !EXPERIMENTS.contains(&self.name.as_str()) {
            return Err(Error::config(format!("unknown experiment '{}' (expected one of: {})", self.name, EXPERIMENTS.join(", "))));
        }
        if !(self.probe_span > 0.0) || self.probe_points < 2 {
            return Err(Error::config("experiment: probe sweep needs a positive span and at least two points"));
        }
        self.phases.validate("experiment.phases")?;
        if self.delay_map_uniform.is_empty() {
            return Err(Error::config("experiment.delay_map_uniform: grid is empty"));
        }
        if self.delay_map_uniform.iter().any(|u| !(u.abs() < 0.5)) {
            return Err(Error::config("experiment.delay_map_uniform: fluxes must lie inside (-0.5, 0.5)"));
        }
        self.delay_map_gradiometric.validate("experiment.delay_map_gradiometric")?;
        self.delay_map_frequency.validate("experiment.delay_map_frequency")?;
        if self.delay_map_frequency.points < 3 || !(self.delay_map_frequency.start > 0.0) {
            return Err(Error::config("experiment.delay_map_frequency: needs at least three positive frequencies"));
        }
        self.amp_map_gradiometric.validate("experiment.amp_map_gradiometric")?;
        self.amp_map_frequency.validate("experiment.amp_map_frequency")?;
        if !(self.amp_map_frequency.start > 0.0) {
            return Err(Error::config("experiment.amp_map_frequency: frequencies must be positive"));
        }
        self.powers.validate("experiment.powers")?;
        if self.targets.is_empty() || self.targets.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::config("experiment.targets: needs at least one positive frequency"));
        }
        if self.line_temperatures.is_empty() || self.line_temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::config("experiment.line_temperatures: needs at least one positive temperature"));
        }
        if let Some(p) = self.compression_power {
            if !(p > 0.0) {
                return Err(Error::config("experiment.compression_power must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Read from config files but left out of the echo and hash, so the
    /// same run written to two places produces identical files.
    #[serde(skip_serializing)]
    pub dir: String,
    /// Also write a plotting script next to the data.
    pub plot_stub: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".to_string(), plot_stub: true }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.solver.validate()?;
        self.experiment.validate()
    }

    /// Flux control with the given amounts in flux quanta and the device's drive.
    pub fn flux(&self, uniform: f64, gradiometric: f64, phase: f64) -> FluxControl {
        let f0 = flux_quantum::<f64>();
        FluxControl {
            uniform_flux: uniform * f0,
            gradiometric_amplitude: gradiometric * f0,
            drive_frequency: TAU * self.device.modulation_frequency,
            drive_phase_offset: phase,
        }
    }
}
