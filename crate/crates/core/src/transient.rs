//! Time-domain integration of the circuit with the Josephson current-phase
//! relation in every SQUID array. Node fluxes are advanced with the implicit
//! trapezoidal rule; a periodic steady state is projected onto the sideband
//! grid omega_p + m Omega for comparison with the harmonic-balance solver.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{db20, Circulation};
use crate::constants::flux_quantum;
use crate::error::{Error, Result};
use crate::floquet::HarmonicScatteringMatrix;
use crate::network::{Branch, NetworkDescription, GROUND};
use crate::{Complex, SquidArraySpec};

/// N identical SQUIDs in series sharing one collective phase, threaded by
/// the flux Phi(t).
#[derive(Clone)]
pub struct NonlinearSquidArray {
    pub spec: SquidArraySpec,
    flux: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for NonlinearSquidArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSquidArray").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl NonlinearSquidArray {
    pub fn new(spec: SquidArraySpec, flux: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, flux: Arc::new(flux) })
    }

    pub fn flux(&self, t: f64) -> f64 {
        (self.flux)(t)
    }

    /// 2 I0 |cos(Phi / 2 phi0)|
    pub fn critical_current(&self, t: f64) -> f64 {
        2.0 * self.spec.junction_critical_current * (std::f64::consts::PI * self.flux(t) / flux_quantum::<f64>()).cos().abs()
    }

    /// Phase across each SQUID for an array flux psi.
    pub fn junction_phase(&self, psi: f64) -> f64 {
        psi / self.spec.phase_flux_scale()
    }

    pub fn current(&self, psi: f64, t: f64) -> f64 {
        self.critical_current(t) * self.junction_phase(psi).sin()
    }

    pub fn small_signal_inductance(&self, t: f64) -> f64 {
        self.spec.phase_flux_scale() / self.critical_current(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum JunctionLaw {
    /// i = I_c(t) sin(psi / N phi0)
    #[default]
    Josephson,
    /// sin(x) replaced by x; the network is then exactly linear in the signal.
    Linear,
}

/// How the flux drive enters the arrays' critical current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationLaw {
    /// The first Fourier component only, exactly as in the harmonic-balance model.
    #[default]
    FirstHarmonic,
    /// |cos(pi Phi(t) / Phi0)| with Phi(t) = Phi_u + s Phi_g cos(Omega t + theta).
    FluxExact { uniform_flux: f64, gradiometric_amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientOptions {
    pub spec: SquidArraySpec,
    pub junction: JunctionLaw,
    pub modulation: ModulationLaw,
    /// Steps per period of the highest retained sideband.
    pub points_per_period: usize,
    /// Sidebands projected on each side of the carrier.
    pub harmonics: usize,
    pub max_denominator: u32,
    /// Beat periods always discarded before the steady-state test.
    pub settle_cycles: usize,
    pub record_cycles: usize,
    pub max_cycles: usize,
    pub steady_tolerance: f64,
    pub newton_tolerance: f64,
    pub max_newton: usize,
    /// Combine runs at h and h/2 to cancel the second-order phase error.
    pub richardson: bool,
    pub keep_waveforms: bool,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self {
            spec: SquidArraySpec::default(),
            junction: JunctionLaw::Josephson,
            modulation: ModulationLaw::FirstHarmonic,
            points_per_period: 32,
            harmonics: 3,
            max_denominator: 64,
            settle_cycles: 2,
            record_cycles: 1,
            max_cycles: 400,
            steady_tolerance: 1e-4,
            newton_tolerance: 1e-10,
            max_newton: 30,
            richardson: true,
            keep_waveforms: false,
        }
    }
}

impl TransientOptions {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.points_per_period < 20 {
            return Err(Error::domain("step must resolve the highest retained harmonic by at least 20 points"));
        }
        if self.max_denominator < 1 || self.record_cycles < 1 || self.max_cycles < 1 || self.max_newton < 1 {
            return Err(Error::domain("transient budgets must be at least 1"));
        }
        if !(self.steady_tolerance > 0.0) || !(self.newton_tolerance > 0.0) {
            return Err(Error::domain("transient tolerances must be positive"));
        }
        Ok(())
    }
}

/// Incident wave a(t) = amplitude cos(omega t) on one port; amplitude in sqrt(W).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Drive {
    pub port: usize,
    pub omega: f64,
    pub amplitude: f64,
}

impl Drive {
    pub fn from_power(port: usize, omega: f64, watts: f64) -> Self {
        Self { port, omega, amplitude: (2.0 * watts).sqrt() }
    }

    pub fn power(&self) -> f64 {
        self.amplitude * self.amplitude / 2.0
    }
}

/// omega = (p / q) Omega.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Snap {
    pub p: u64,
    pub q: u64,
}

/// Closest p/q with q <= max_denominator; the smaller q wins a tie.
pub fn snap_frequency(omega: f64, modulation: f64, max_denominator: u32) -> Result<(Snap, f64)> {
    if !(omega > 0.0 && modulation > 0.0) {
        return Err(Error::domain("snapping needs positive frequencies"));
    }
    let mut best: Option<(Snap, f64)> = None;
    for q in 1..=max_denominator as u64 {
        let p = (omega * q as f64 / modulation).round().max(1.0) as u64;
        let w = p as f64 / q as f64 * modulation;
        if best.map_or(true, |(_, bw)| (w - omega).abs() < (bw - omega).abs()) {
            best = Some((Snap { p, q }, w));
        }
    }
    Ok(best.expect("at least one denominator"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct EnergyAudit {
    pub incident_power: f64,
    /// Time-averaged power leaving through all ports.
    pub outgoing_power: f64,
    /// Sum over ports and projected sidebands of |b_m|^2 / 2.
    pub outgoing_spectral_power: f64,
    /// Work done on the arrays by the flux drive.
    pub pump_power: f64,
    pub dissipated_power: f64,
    /// |in - out + pump - dissipated| relative to the incident power.
    pub relative_imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientResult {
    pub requested_frequency: f64,
    pub probe_frequency: f64,
    pub snap: Snap,
    pub modulation: f64,
    pub drive: Drive,
    pub harmonics: usize,
    pub n_ports: usize,
    pub steps_per_cycle: usize,
    pub step: f64,
    pub cycles_to_settle: usize,
    /// Record window only, filled when waveforms are kept.
    pub time: Vec<f64>,
    pub node_voltages: Vec<Vec<f64>>,
    pub incident: Vec<Vec<f64>>,
    pub outgoing: Vec<Vec<f64>>,
    /// Outgoing sideband amplitudes per unit incident amplitude, [(m + M) * ports + port].
    projections: Vec<Complex>,
    /// Relative change of the projections between steps h and h/2.
    pub step_halving_change: Option<f64>,
    pub energy: EnergyAudit,
    pub junction_overdriven: bool,
    pub max_junction_phase: f64,
}

impl TransientResult {
    pub fn scattering(&self, m: i32, out: usize) -> Complex {
        let mm = self.harmonics as i32;
        if m.abs() > mm {
            return Complex::new(0.0, 0.0);
        }
        self.projections[(m + mm) as usize * self.n_ports + out]
    }

    pub fn carrier(&self, out: usize) -> Complex {
        self.scattering(0, out)
    }

    /// Norm of the difference to the matching column of a harmonic
    /// scattering matrix, relative to the column's norm, over all ports and
    /// the sidebands both results hold.
    pub fn deviation_from(&self, s: &HarmonicScatteringMatrix) -> f64 {
        let mm = self.harmonics.min(s.truncation) as i32;
        let (mut num, mut den) = (0.0, 0.0);
        for m in -mm..=mm {
            for o in 0..self.n_ports {
                let r = s.get(m, o, self.drive.port);
                num += (self.scattering(m, o) - r).norm_sqr();
                den += r.norm_sqr();
            }
        }
        (num / den).sqrt()
    }
}

enum ElementLaw {
    /// 1/l(t) = g0 (1 + depth cos(omega t + phase))
    FirstHarmonic { g0: f64, depth: f64, omega: f64, phase: f64 },
    Flux(NonlinearSquidArray),
}

struct ArrayElement {
    a: usize,
    b: usize,
    law: ElementLaw,
}

impl ArrayElement {
    /// Inverse small-signal inductance and its time derivative.
    fn inverse_inductance(&self, t: f64, scale: f64) -> (f64, f64) {
        match &self.law {
            ElementLaw::FirstHarmonic { g0, depth, omega, phase } => {
                let x = omega * t + phase;
                (g0 * (1.0 + depth * x.cos()), -g0 * depth * omega * x.sin())
            }
            ElementLaw::Flux(arr) => {
                let g = |t: f64| arr.critical_current(t) / scale;
                let dt = 1e-15;
                (g(t), (g(t + dt) - g(t - dt)) / (2.0 * dt))
            }
        }
    }
}

struct DriveStamp {
    node: usize,
    reference: usize,
    /// Peak injected current 2 a / sqrt(Z0).
    current: f64,
    omega: f64,
}

/// Trapezoidal integrator for C psi'' + G psi' + f(psi, t) = J(t).
struct Integrator {
    n: usize,
    cmat: DMatrix<f64>,
    gmat: DMatrix<f64>,
    klin: DMatrix<f64>,
    arrays: Vec<ArrayElement>,
    resistors: Vec<(usize, usize, f64)>,
    algebraic: Vec<bool>,
    junction: JunctionLaw,
    scale: f64,
    drive: Option<DriveStamp>,
    h: f64,
    newton_tolerance: f64,
    max_newton: usize,
    psi: DVector<f64>,
    v: DVector<f64>,
    f: DVector<f64>,
    j: DVector<f64>,
}

fn stamp_real(m: &mut DMatrix<f64>, a: usize, b: usize, y: f64) {
    if a != GROUND {
        m[(a, a)] += y;
        if b != GROUND {
            m[(a, b)] -= y;
        }
    }
    if b != GROUND {
        m[(b, b)] += y;
        if a != GROUND {
            m[(b, a)] -= y;
        }
    }
}

fn node_value(x: &DVector<f64>, n: usize) -> f64 {
    if n == GROUND {
        0.0
    } else {
        x[n]
    }
}

impl Integrator {
    fn new(net: &NetworkDescription, opts: &TransientOptions, drive: Option<&Drive>, h: f64) -> Result<Self> {
        net.validate()?;
        opts.validate()?;
        let n = net.n_nodes();
        let mut cmat = DMatrix::zeros(n, n);
        let mut gmat = DMatrix::zeros(n, n);
        let mut klin = DMatrix::zeros(n, n);
        let mut arrays = Vec::new();
        let mut resistors = Vec::new();
        let scale = opts.spec.phase_flux_scale();
        for br in &net.branches {
            match *br {
                Branch::Inductor { a, b, l } => stamp_real(&mut klin, a, b, 1.0 / l),
                Branch::Capacitor { a, b, c } => stamp_real(&mut cmat, a, b, c),
                Branch::Resistor { a, b, r } => {
                    stamp_real(&mut gmat, a, b, 1.0 / r);
                    resistors.push((a, b, r));
                }
                Branch::ModulatedInductor { a, b, l0, delta, omega, phase, sign } => {
                    let law = match opts.modulation {
                        ModulationLaw::FirstHarmonic => ElementLaw::FirstHarmonic { g0: 1.0 / l0, depth: sign * delta, omega, phase },
                        ModulationLaw::FluxExact { uniform_flux, gradiometric_amplitude } => {
                            let arr = NonlinearSquidArray::new(opts.spec, move |t| {
                                uniform_flux + sign * gradiometric_amplitude * (omega * t + phase).cos()
                            })?;
                            ElementLaw::Flux(arr)
                        }
                    };
                    arrays.push(ArrayElement { a, b, law });
                }
            }
        }
        for p in &net.ports {
            stamp_real(&mut gmat, p.node, p.reference, 1.0 / p.z0);
        }
        let algebraic = (0..n)
            .map(|i| (0..n).all(|k| cmat[(i, k)] == 0.0 && gmat[(i, k)] == 0.0))
            .collect();
        let drive = match drive {
            None => None,
            Some(d) => {
                let port = net.ports.get(d.port).ok_or_else(|| Error::domain("drive port out of range"))?;
                Some(DriveStamp {
                    node: port.node,
                    reference: port.reference,
                    current: 2.0 * d.amplitude / port.z0.sqrt(),
                    omega: d.omega,
                })
            }
        };
        let mut it = Self {
            n,
            cmat,
            gmat,
            klin,
            arrays,
            resistors,
            algebraic,
            junction: opts.junction,
            scale,
            drive,
            h,
            newton_tolerance: opts.newton_tolerance,
            max_newton: opts.max_newton,
            psi: DVector::zeros(n),
            v: DVector::zeros(n),
            f: DVector::zeros(n),
            j: DVector::zeros(n),
        };
        it.j = it.source(0.0, 0.0);
        Ok(it)
    }

    fn set_state(&mut self, psi: &[f64], t: f64) {
        self.psi = DVector::from_column_slice(psi);
        self.v = DVector::zeros(self.n);
        self.f = self.internal_currents(&self.psi.clone(), t, None);
        self.j = self.source(t, 0.0);
    }

    fn source(&self, t: f64, envelope: f64) -> DVector<f64> {
        let mut j = DVector::zeros(self.n);
        if let Some(d) = &self.drive {
            let i = envelope * d.current * (d.omega * t).cos();
            if d.node != GROUND {
                j[d.node] += i;
            }
            if d.reference != GROUND {
                j[d.reference] -= i;
            }
        }
        j
    }

    /// Currents leaving each node through inductive branches; optionally
    /// accumulates their Jacobian.
    fn internal_currents(&self, psi: &DVector<f64>, t: f64, mut jac: Option<&mut DMatrix<f64>>) -> DVector<f64> {
        let mut f = &self.klin * psi;
        if let Some(k) = jac.as_deref_mut() {
            *k += &self.klin;
        }
        for el in &self.arrays {
            let (g, _) = el.inverse_inductance(t, self.scale);
            let x = node_value(psi, el.a) - node_value(psi, el.b);
            let (i, di) = match self.junction {
                JunctionLaw::Josephson => {
                    let u = x / self.scale;
                    (g * self.scale * u.sin(), g * u.cos())
                }
                JunctionLaw::Linear => (g * x, g),
            };
            if el.a != GROUND {
                f[el.a] += i;
            }
            if el.b != GROUND {
                f[el.b] -= i;
            }
            if let Some(k) = jac.as_deref_mut() {
                stamp_real(k, el.a, el.b, di);
            }
        }
        f
    }

    fn step(&mut self, t1: f64, envelope: f64) -> Result<()> {
        let h = self.h;
        let j1 = self.source(t1, envelope);
        let mut psi1 = &self.psi + &self.v * h;
        let linear = self.junction == JunctionLaw::Linear;
        let mut done = false;
        for _ in 0..self.max_newton {
            let v1 = (&psi1 - &self.psi) * (2.0 / h) - &self.v;
            let mut kdyn = DMatrix::zeros(self.n, self.n);
            let f1 = self.internal_currents(&psi1, t1, Some(&mut kdyn));
            let mut r = &self.cmat * (&v1 - &self.v)
                + &self.gmat * (&v1 + &self.v) * (h / 2.0)
                + (&f1 + &self.f - &self.j - &j1) * (h / 2.0);
            let mut jac = &self.cmat * (2.0 / h) + &self.gmat + &kdyn * (h / 2.0);
            for i in 0..self.n {
                if self.algebraic[i] {
                    r[i] = f1[i] - j1[i];
                    for k in 0..self.n {
                        jac[(i, k)] = kdyn[(i, k)];
                    }
                }
            }
            let dx = jac
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::solver("singular transient Jacobian"))?;
            psi1 -= &dx;
            let size = psi1.amax();
            if linear || dx.amax() <= self.newton_tolerance * size || size == 0.0 {
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::solver("transient Newton iteration did not converge"));
        }
        if psi1.iter().any(|x| !x.is_finite()) {
            return Err(Error::solver("transient diverged"));
        }
        let v1 = (&psi1 - &self.psi) * (2.0 / h) - &self.v;
        self.f = self.internal_currents(&psi1, t1, None);
        self.psi = psi1;
        self.v = v1;
        self.j = j1;
        Ok(())
    }

    fn max_junction_phase(&self) -> f64 {
        self.arrays
            .iter()
            .map(|el| ((node_value(&self.psi, el.a) - node_value(&self.psi, el.b)) / self.scale).abs())
            .fold(0.0, f64::max)
    }

    fn pump_power(&self, t: f64) -> f64 {
        let mut p = 0.0;
        for el in &self.arrays {
            let (_, dg) = el.inverse_inductance(t, self.scale);
            let x = node_value(&self.psi, el.a) - node_value(&self.psi, el.b);
            let e = match self.junction {
                JunctionLaw::Josephson => self.scale * self.scale * (1.0 - (x / self.scale).cos()),
                JunctionLaw::Linear => x * x / 2.0,
            };
            p += dg * e;
        }
        p
    }

    fn dissipated_power(&self) -> f64 {
        self.resistors
            .iter()
            .map(|&(a, b, r)| {
                let dv = node_value(&self.v, a) - node_value(&self.v, b);
                dv * dv / r
            })
            .sum()
    }
}

const UNMODULATED_CYCLE: u64 = 32;

struct Plan {
    snap: Snap,
    probe: f64,
    modulation: f64,
    harmonics: usize,
    steps: usize,
    period: f64,
}

fn plan(net: &NetworkDescription, drive: &Drive, opts: &TransientOptions) -> Result<Plan> {
    let om = net.modulation()?;
    if !(drive.omega > 0.0) {
        return Err(Error::domain("drive frequency must be positive"));
    }
    let (snap, probe, modulation, harmonics) = if om > 0.0 {
        let (s, w) = snap_frequency(drive.omega, om, opts.max_denominator)?;
        (s, w, om, opts.harmonics)
    } else {
        // without modulation a cycle is a block of carrier periods
        (Snap { p: UNMODULATED_CYCLE, q: 1 }, drive.omega, drive.omega / UNMODULATED_CYCLE as f64, 0)
    };
    let mi = harmonics as i64;
    if snap.p as i64 - mi * snap.q as i64 <= 0 {
        return Err(Error::domain("sideband at or below zero frequency within truncation"));
    }
    let top = snap.p as usize + harmonics * snap.q as usize;
    // even, so the alternating mode is orthogonal to every projection
    let steps = (opts.points_per_period * top).next_multiple_of(2);
    let period = std::f64::consts::TAU * snap.q as f64 / modulation;
    Ok(Plan { snap, probe, modulation, harmonics, steps, period })
}

struct Run {
    projections: Vec<Complex>,
    cycles_to_settle: usize,
    energy: EnergyAudit,
    overdriven_phase: f64,
    time: Vec<f64>,
    voltages: Vec<Vec<f64>>,
    incident: Vec<Vec<f64>>,
    outgoing: Vec<Vec<f64>>,
}

fn run_once(net: &NetworkDescription, drive: &Drive, opts: &TransientOptions, pl: &Plan, steps: usize) -> Result<Run> {
    let h = pl.period / steps as f64;
    let snapped = Drive { omega: pl.probe, ..*drive };
    let mut it = Integrator::new(net, opts, Some(&snapped), h)?;
    let np = net.ports.len();
    let nh = 2 * pl.harmonics + 1;
    let table: Vec<Complex> = (0..steps).map(|k| Complex::from_polar(1.0, std::f64::consts::TAU * k as f64 / steps as f64)).collect();
    let orders: Vec<u64> = (0..nh)
        .map(|j| (pl.snap.p as i64 + (j as i64 - pl.harmonics as i64) * pl.snap.q as i64) as u64 % steps as u64)
        .collect();
    let sqz: Vec<f64> = net.ports.iter().map(|p| p.z0.sqrt()).collect();
    let a_of = |k: usize, t: f64, env: f64| if k == drive.port { env * drive.amplitude * (pl.probe * t).cos() } else { 0.0 };

    let mut prev: Option<Vec<Complex>> = None;
    let mut recording = false;
    let mut recorded = 0usize;
    let mut cycles = 0usize;
    let mut settle_at = 0usize;
    let mut sum = vec![Complex::new(0.0, 0.0); nh * np];
    let mut audit = [0.0f64; 4]; // incident, outgoing, pump, dissipated
    let mut worst_phase = 0.0f64;
    let (mut time, mut voltages, mut incident, mut outgoing) = (Vec::new(), Vec::new(), vec![Vec::new(); np], vec![Vec::new(); np]);
    loop {
        let mut acc = vec![Complex::new(0.0, 0.0); nh * np];
        for n in 1..=steps {
            // times inside a beat period; everything is periodic in it
            let local = n % steps;
            let t = local as f64 * h;
            // the drive is switched on smoothly over the first beat period;
            // an abrupt start leaves an undamped alternating mode in the
            // trapezoidal velocities of nodes without capacitance
            let env = if cycles == 0 { (std::f64::consts::FRAC_PI_2 * n as f64 / steps as f64).sin().powi(2) } else { 1.0 };
            it.step(t, env)?;
            for (k, port) in net.ports.iter().enumerate() {
                let v = node_value(&it.v, port.node) - node_value(&it.v, port.reference);
                let a = a_of(k, t, env);
                let b = v / sqz[k] - a;
                for (j, &ord) in orders.iter().enumerate() {
                    let idx = ((ord as u128 * local as u128) % steps as u128) as usize;
                    acc[j * np + k] += table[idx] * b;
                }
                if recording {
                    audit[0] += a * a;
                    audit[1] += b * b;
                    if opts.keep_waveforms {
                        incident[k].push(a);
                        outgoing[k].push(b);
                    }
                }
            }
            if recording {
                audit[2] += it.pump_power(t);
                audit[3] += it.dissipated_power();
                worst_phase = worst_phase.max(it.max_junction_phase());
                if opts.keep_waveforms {
                    time.push((cycles as f64) * pl.period + t);
                    voltages.push(it.v.iter().copied().collect());
                }
            }
        }
        cycles += 1;
        let scale = 2.0 / (steps as f64 * drive.amplitude);
        let proj: Vec<Complex> = acc.iter().map(|x| x * scale).collect();
        if recording {
            for (s, p) in sum.iter_mut().zip(&proj) {
                *s += p;
            }
            recorded += 1;
            if recorded == opts.record_cycles {
                break;
            }
            continue;
        }
        if let Some(pv) = &prev {
            let num: f64 = proj.iter().zip(pv).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = proj.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if cycles >= opts.settle_cycles && (den == 0.0 || num <= opts.steady_tolerance * den) {
                recording = true;
                settle_at = cycles;
            }
        }
        prev = Some(proj);
        if !recording && cycles >= opts.max_cycles {
            return Err(Error::solver("transient did not settle"));
        }
    }
    let count = (opts.record_cycles * steps) as f64;
    let projections: Vec<Complex> = sum.iter().map(|x| x / opts.record_cycles as f64).collect();
    let incident_power = audit[0] / count;
    let outgoing_power = audit[1] / count;
    let pump_power = audit[2] / count;
    let dissipated_power = audit[3] / count;
    let a2 = drive.amplitude * drive.amplitude;
    let spectral = projections.iter().map(|x| x.norm_sqr()).sum::<f64>() * a2 / 2.0;
    let energy = EnergyAudit {
        incident_power,
        outgoing_power,
        outgoing_spectral_power: spectral,
        pump_power,
        dissipated_power,
        relative_imbalance: (incident_power - outgoing_power + pump_power - dissipated_power).abs() / incident_power,
    };
    Ok(Run { projections, cycles_to_settle: settle_at, energy, overdriven_phase: worst_phase, time, voltages, incident, outgoing })
}

/// Drive the network from one port until the response is periodic, then
/// project the outgoing waves onto the sideband grid.
pub fn simulate(net: &NetworkDescription, drive: &Drive, opts: &TransientOptions) -> Result<TransientResult> {
    if !(drive.amplitude > 0.0) {
        return Err(Error::domain("drive amplitude must be positive"));
    }
    if drive.port >= net.ports.len() {
        return Err(Error::domain("drive port out of range"));
    }
    let pl = plan(net, drive, opts)?;
    let (coarse, fine) = if opts.richardson {
        let (c, f) = rayon::join(|| run_once(net, drive, opts, &pl, pl.steps), || run_once(net, drive, opts, &pl, 2 * pl.steps));
        (Some(c?), f?)
    } else {
        (None, run_once(net, drive, opts, &pl, pl.steps)?)
    };
    let (projections, change, phase) = match &coarse {
        Some(c) => {
            let ex: Vec<Complex> = fine.projections.iter().zip(&c.projections).map(|(f, c)| (f * 4.0 - c) / 3.0).collect();
            let num: f64 = fine.projections.iter().zip(&c.projections).map(|(f, c)| (f - c).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = fine.projections.iter().map(|f| f.norm_sqr()).sum::<f64>().sqrt();
            (ex, Some(num / den), c.overdriven_phase.max(fine.overdriven_phase))
        }
        None => (fine.projections.clone(), None, fine.overdriven_phase),
    };
    let steps = if opts.richardson { 2 * pl.steps } else { pl.steps };
    Ok(TransientResult {
        requested_frequency: drive.omega,
        probe_frequency: pl.probe,
        snap: pl.snap,
        modulation: pl.modulation,
        drive: Drive { omega: pl.probe, ..*drive },
        harmonics: pl.harmonics,
        n_ports: net.ports.len(),
        steps_per_cycle: steps,
        step: pl.period / steps as f64,
        cycles_to_settle: fine.cycles_to_settle,
        time: fine.time,
        node_voltages: fine.voltages,
        incident: fine.incident,
        outgoing: fine.outgoing,
        projections,
        step_halving_change: change,
        energy: fine.energy,
        junction_overdriven: phase > std::f64::consts::FRAC_PI_2,
        max_junction_phase: phase,
    })
}

/// Undriven evolution from a given node-flux state at rest; returns the
/// node fluxes after every step, starting with the initial state.
pub fn free_oscillation(
    net: &NetworkDescription,
    opts: &TransientOptions,
    initial_flux: &[f64],
    step: f64,
    n_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if initial_flux.len() != net.n_nodes() {
        return Err(Error::domain("initial state must give every node"));
    }
    if !(step > 0.0) {
        return Err(Error::domain("step must be positive"));
    }
    let mut it = Integrator::new(net, opts, None, step)?;
    it.set_state(initial_flux, 0.0);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(initial_flux.to_vec());
    for n in 1..=n_steps {
        it.step(n as f64 * step, 0.0)?;
        out.push(it.psi.iter().copied().collect());
    }
    Ok(out)
}

/// Where a power search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerBound {
    Found,
    /// The junctions were overdriven or the response stopped settling first.
    LowerBound,
    NotReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerHandling {
    /// W; +inf when not reached
    pub power: f64,
    pub dbm: f64,
    pub bound: PowerBound,
    /// Small-signal value of the tracked quantity (dB).
    pub small_signal_db: f64,
}

impl PowerHandling {
    fn new(power: f64, bound: PowerBound, small_signal_db: f64) -> Self {
        Self { power, dbm: watts_to_dbm(power), bound, small_signal_db }
    }
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSearch {
    pub min_power: f64,
    pub max_power: f64,
    pub points_per_decade: u32,
    /// Bisection stops when the bracket is narrower than this in log10(P).
    pub log_tolerance: f64,
    /// Power of the small-signal reference run.
    pub reference_power: f64,
}

impl Default for PowerSearch {
    fn default() -> Self {
        Self { min_power: 1e-15, max_power: 1e-9, points_per_decade: 2, log_tolerance: 0.01, reference_power: 1e-21 }
    }
}

/// |b_out / a_in| at the carrier in dB, and whether the junctions were overdriven.
pub fn carrier_transmission_db(
    net: &NetworkDescription,
    omega: f64,
    input: usize,
    output: usize,
    power: f64,
    opts: &TransientOptions,
) -> Result<(f64, bool)> {
    let r = simulate(net, &Drive::from_power(input, omega, power), opts)?;
    Ok((db20(r.carrier(output).norm()), r.junction_overdriven))
}

enum Probe {
    Crossed,
    Below,
    Stop,
}

fn threshold_search<F>(search: &PowerSearch, small_signal_db: f64, probe: F) -> Result<PowerHandling>
where
    F: Fn(f64) -> Probe + Sync,
{
    if !(search.min_power > 0.0 && search.max_power > search.min_power && search.points_per_decade >= 1) {
        return Err(Error::domain("power search range must be positive and increasing"));
    }
    let decades = (search.max_power / search.min_power).log10();
    let n = (decades * search.points_per_decade as f64).ceil() as usize + 1;
    let grid: Vec<f64> = (0..n)
        .map(|i| search.min_power * 10f64.powf(i as f64 / search.points_per_decade as f64))
        .map(|p| p.min(search.max_power))
        .collect();
    let outcomes: Vec<Probe> = grid.par_iter().map(|&p| probe(p)).collect();
    let mut lo: Option<f64> = None;
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            Probe::Below => lo = Some(grid[i]),
            Probe::Stop => {
                return Ok(match lo {
                    Some(p) => PowerHandling::new(p, PowerBound::LowerBound, small_signal_db),
                    None => PowerHandling::new(0.0, PowerBound::LowerBound, small_signal_db),
                })
            }
            Probe::Crossed => {
                let Some(mut a) = lo else {
                    // already past the threshold at the bottom of the range
                    return Ok(PowerHandling::new(grid[0], PowerBound::Found, small_signal_db));
                };
                let mut b = grid[i];
                let mut last_good = a;
                while (b / a).log10() > search.log_tolerance {
                    let m = (a * b).sqrt();
                    match probe(m) {
                        Probe::Crossed => b = m,
                        Probe::Below => {
                            a = m;
                            last_good = m;
                        }
                        Probe::Stop => return Ok(PowerHandling::new(last_good, PowerBound::LowerBound, small_signal_db)),
                    }
                }
                return Ok(PowerHandling::new((a * b).sqrt(), PowerBound::Found, small_signal_db));
            }
        }
    }
    Ok(PowerHandling::new(f64::INFINITY, PowerBound::NotReached, small_signal_db))
}

/// Input power at which the through transmission falls 1 dB below its
/// small-signal value.
pub fn find_compression_point(
    net: &NetworkDescription,
    omega: f64,
    direction: Circulation,
    opts: &TransientOptions,
    search: &PowerSearch,
) -> Result<PowerHandling> {
    let (inp, out) = direction.through();
    let (lin, _) = carrier_transmission_db(net, omega, inp, out, search.reference_power, opts)?;
    if opts.junction == JunctionLaw::Linear {
        // transmission is independent of power in a linear network
        return Ok(PowerHandling::new(f64::INFINITY, PowerBound::NotReached, lin));
    }
    threshold_search(search, lin, |p| match carrier_transmission_db(net, omega, inp, out, p, opts) {
        Ok((_, true)) | Err(_) => Probe::Stop,
        Ok((db, false)) if db <= lin - 1.0 => Probe::Crossed,
        Ok(_) => Probe::Below,
    })
}

/// Input power at which the isolation of the reverse path drops below 20 dB.
pub fn find_expansion_point(
    net: &NetworkDescription,
    omega: f64,
    direction: Circulation,
    opts: &TransientOptions,
    search: &PowerSearch,
) -> Result<PowerHandling> {
    let (out, inp) = direction.through();
    let (lin, _) = carrier_transmission_db(net, omega, inp, out, search.reference_power, opts)?;
    let iso = -lin;
    if opts.junction == JunctionLaw::Linear || iso <= 20.0 {
        let bound = if iso <= 20.0 { PowerBound::Found } else { PowerBound::NotReached };
        let p = if iso <= 20.0 { search.reference_power } else { f64::INFINITY };
        return Ok(PowerHandling::new(p, bound, iso));
    }
    threshold_search(search, iso, |p| match carrier_transmission_db(net, omega, inp, out, p, opts) {
        Ok((_, true)) | Err(_) => Probe::Stop,
        Ok((db, false)) if -db < 20.0 => Probe::Crossed,
        Ok(_) => Probe::Below,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerSweepPoint {
    pub power: f64,
    pub transmission_db: f64,
    pub isolation_db: f64,
    pub junction_overdriven: bool,
}

/// Forward transmission and reverse isolation at each input power.
pub fn power_sweep(
    net: &NetworkDescription,
    omega: f64,
    direction: Circulation,
    powers: &[f64],
    opts: &TransientOptions,
) -> Vec<Result<PowerSweepPoint>> {
    let (inp, out) = direction.through();
    powers
        .par_iter()
        .map(|&p| {
            let (t, o1) = carrier_transmission_db(net, omega, inp, out, p, opts)?;
            let (r, o2) = carrier_transmission_db(net, omega, out, inp, p, opts)?;
            Ok(PowerSweepPoint { power: p, transmission_db: t, isolation_db: -r, junction_overdriven: o1 || o2 })
        })
        .collect()
}
