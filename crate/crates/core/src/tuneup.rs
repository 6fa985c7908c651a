//! Three-step tune-up: uniform flux sets the frequency, gradiometric flux
//! sets the resonant delay to a quarter modulation period, and a phase scan
//! per direction minimizes a scalar cost.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{finite_db, metrics_from_sweep, Circulation, MetricOptions, MetricsRecord};
use crate::constants::flux_quantum;
use crate::device::{flux_to_bridge_params, resonant_frequency};
use crate::error::{Error, Result};
use crate::floquet::{group_delay, linspace, refined_peak, sweep, sweep_all};
use crate::network::{build_circulator_network, rotating_frame_equivalent, BiasPairing};
use crate::phasor::generalized_transmission;
use crate::search::{golden_section, grid_then_parabolic};
use crate::{CircuitParams, FluxControl, SquidArraySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    /// per dB of insertion loss
    pub insertion_loss: f64,
    /// per dB of isolation
    pub isolation: f64,
    /// per MHz of 20 dB isolation bandwidth
    pub bandwidth: f64,
    /// Isolation counted by the cost saturates here (dB).
    pub isolation_cap: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { insertion_loss: 1.0, isolation: 0.25, bandwidth: 0.05, isolation_cap: 40.0 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.insertion_loss, self.isolation, self.bandwidth];
        if w.iter().any(|x| !(*x >= 0.0)) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::domain("cost weights must be non-negative and not all zero"));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { insertion_loss: k * self.insertion_loss, isolation: k * self.isolation, bandwidth: k * self.bandwidth, ..*self }
    }
}

/// Cost of one direction; lower is better.
pub fn direction_cost(m: &MetricsRecord, w: &Weights) -> f64 {
    w.insertion_loss * m.insertion_loss - w.isolation * m.max_isolation.min(w.isolation_cap)
        - w.bandwidth * m.isolation_bandwidth_20db / 1e6
}

pub fn cost(cw: &MetricsRecord, ccw: &MetricsRecord, w: &Weights) -> Result<f64> {
    w.validate()?;
    Ok(direction_cost(cw, w) + direction_cost(ccw, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub flux: FluxControl,
    pub circuit: CircuitParams,
    /// rad/s
    pub modulation: f64,
    pub phase: f64,
    pub direction: Circulation,
    pub metrics: MetricsRecord,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneOptions {
    pub weights: Weights,
    pub pairing: BiasPairing,
    pub truncation: usize,
    /// Half-width (Hz) and step (Hz) of the metric sweep around the target.
    pub sweep_half_width: f64,
    pub sweep_step: f64,
    /// Half-width (rad) and step (rad) of the phase scan around +-pi/2.
    pub phase_half_width: f64,
    pub phase_step: f64,
    /// Shortest resonant delay the device can reach (s).
    pub delay_floor: Option<f64>,
    /// Cap on alternations of steps 1 and 2.
    pub max_rounds: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            pairing: BiasPairing::Quadrature,
            truncation: 2,
            sweep_half_width: 150e6,
            sweep_step: 1e6,
            phase_half_width: 0.6,
            phase_step: 0.1,
            delay_floor: None,
            max_rounds: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub cw: OperatingPoint,
    pub ccw: OperatingPoint,
    /// Resonant delay after step 2, floor applied (s).
    pub delay: f64,
    pub delay_limited: bool,
    pub flags: Vec<String>,
}

/// Peak group delay (s) of the differential transmission of the static
/// network the drive is equivalent to, and the frequency (rad/s) of the peak.
pub fn differential_delay_peak(p: &CircuitParams) -> Result<(f64, f64)> {
    let net = rotating_frame_equivalent(p)?;
    let w0 = resonant_frequency(p)?;
    // the delay peak is about 1/tau wide; resolve it with a few hundred points
    let tau_est = 16.0 * p.z0 * p.c / (p.delta0 * p.delta0).max(1e-12);
    let half = (20.0 / tau_est).min(0.3 * w0);
    let ws = linspace(w0 - half, w0 + half, 801);
    let s = sweep_all(&net, &ws, 0)?;
    let d: Vec<_> = s.iter().map(|m| m.differential(0, true)).collect();
    let tau = group_delay(&ws, &d, 0.0)?;
    let (w, t) = refined_peak(&ws, &tau);
    Ok((t, w))
}

fn circuit_from_flux(fc: &FluxControl, spec: &SquidArraySpec, p0: &CircuitParams) -> Result<CircuitParams> {
    let (l0, delta0) = flux_to_bridge_params(fc, spec)?;
    Ok(CircuitParams { l0, delta0, omega: fc.drive_frequency, ..*p0 })
}

fn frequency_for(fc: &FluxControl, spec: &SquidArraySpec, p0: &CircuitParams) -> Result<f64> {
    resonant_frequency(&circuit_from_flux(fc, spec, p0)?)
}

/// Metrics of one direction at phase phi, from a carrier sweep around the target.
pub fn direction_metrics(p: &CircuitParams, phi: f64, center_hz: f64, dir: Circulation, opts: &TuneOptions) -> Result<MetricsRecord> {
    let q = CircuitParams { phi, ..*p };
    let net = build_circulator_network(&q, opts.pairing)?;
    let n = (2.0 * opts.sweep_half_width / opts.sweep_step).round() as usize + 1;
    let ws: Vec<f64> = linspace(center_hz - opts.sweep_half_width, center_hz + opts.sweep_half_width, n).iter().map(|f| TAU * f).collect();
    let s = sweep_all(&net, &ws, opts.truncation)?;
    metrics_from_sweep(&ws, &s, dir, &MetricOptions::default())
}

/// Law-based cost of one direction for delay phase omega_tau: the
/// transmission weights stand in for the measured transmissions.
pub fn law_cost(omega_tau: f64, phi: f64, dir: Circulation, w: &Weights) -> f64 {
    let (fwd, bwd) = generalized_transmission(omega_tau, phi);
    let (t, r) = match dir {
        Circulation::Ccw => (fwd, bwd),
        Circulation::Cw => (bwd, fwd),
    };
    let il = finite_db(-10.0 * t.log10());
    let iso = finite_db(-10.0 * r.log10());
    w.insertion_loss * il - w.isolation * iso.min(w.isolation_cap)
}

/// Best phase for each direction from the law alone; cw mirrors ccw.
pub fn law_optimal_phases(omega_tau: f64, w: &Weights) -> (f64, f64) {
    let grid: Vec<f64> = (1..1000).map(|k| PI * k as f64 / 1000.0).collect();
    let best = grid_then_parabolic(&grid, |phi| law_cost(omega_tau, phi, Circulation::Ccw, w)).expect("non-empty grid");
    (best.x, TAU - best.x)
}

/// Step 3 for one direction: grid scan of phi around its nominal value,
/// parabolic refinement, lowest phase on ties.
fn scan_phase(p: &CircuitParams, center_hz: f64, dir: Circulation, opts: &TuneOptions) -> Result<(f64, MetricsRecord, f64)> {
    let nominal = match dir {
        Circulation::Ccw => FRAC_PI_2,
        Circulation::Cw => 3.0 * FRAC_PI_2,
    };
    let k = (opts.phase_half_width / opts.phase_step).round() as i64;
    let grid: Vec<f64> = (-k..=k).map(|i| nominal + i as f64 * opts.phase_step).collect();
    let evals: Vec<Result<MetricsRecord>> = grid.par_iter().map(|&phi| direction_metrics(p, phi, center_hz, dir, opts)).collect();
    let mut costs = Vec::with_capacity(grid.len());
    for e in &evals {
        costs.push(direction_cost(e.as_ref().map_err(|e| e.clone())?, &opts.weights));
    }
    let mut idx = 0;
    let best = grid_then_parabolic(&grid, |phi| {
        let c = if idx < costs.len() {
            costs[idx]
        } else {
            direction_metrics(p, phi, center_hz, dir, opts).map(|m| direction_cost(&m, &opts.weights)).unwrap_or(f64::INFINITY)
        };
        idx += 1;
        c
    })
    .ok_or_else(|| Error::domain("empty phase grid"))?;
    let phi = best.x.rem_euclid(TAU);
    let m = direction_metrics(p, phi, center_hz, dir, opts)?;
    Ok((phi, m, direction_cost(&m, &opts.weights)))
}

/// Tune the device to `target_hz` and select both circulation phases.
pub fn tune(target_hz: f64, p0: &CircuitParams, spec: &SquidArraySpec, opts: &TuneOptions) -> Result<TuneResult> {
    p0.validate()?;
    spec.validate()?;
    opts.weights.validate()?;
    if !(p0.omega > 0.0) {
        return Err(Error::domain("tune-up needs a positive modulation frequency"));
    }
    let f0 = flux_quantum::<f64>();
    let target = TAU * target_hz;
    let tau_target = FRAC_PI_2 / p0.omega;
    let margin = 1e-3 * f0;
    let mut fc = FluxControl { uniform_flux: 0.0, gradiometric_amplitude: 0.05 * f0, drive_frequency: p0.omega, drive_phase_offset: p0.phi };
    let mut flags = Vec::new();

    let mut converged = false;
    let mut round = 0;
    loop {
        // step 1: uniform flux puts the delay centre on the target
        let hi = 0.5 * f0 - fc.gradiometric_amplitude - margin;
        let at = |u: f64| frequency_for(&FluxControl { uniform_flux: u, ..fc }, spec, p0);
        let (top, bottom) = (at(0.0)?, at(hi)?);
        if !(target <= top && target >= bottom) {
            return Err(Error::domain(format!(
                "target out of tunable range ({:.4} to {:.4} GHz)",
                bottom / TAU / 1e9,
                top / TAU / 1e9
            )));
        }
        let m = golden_section(|u| at(u).map(|w| (w / target - 1.0).powi(2)).unwrap_or(f64::INFINITY), 0.0, hi, 1e-10 * f0, 200);
        let du = (m.x - fc.uniform_flux).abs();
        fc.uniform_flux = m.x;
        if converged || round == opts.max_rounds {
            break;
        }
        round += 1;

        // step 2: gradiometric flux sets the resonant delay to pi / (2 Omega)
        let hi_g = 0.5 * f0 - fc.uniform_flux - margin;
        let delay = |g: f64| -> f64 {
            circuit_from_flux(&FluxControl { gradiometric_amplitude: g, ..fc }, spec, p0)
                .and_then(|p| differential_delay_peak(&p))
                .map(|(t, _)| t)
                .unwrap_or(f64::INFINITY)
        };
        let m = golden_section(|g| ((delay(g) - tau_target) / tau_target).powi(2), 1e-4 * f0, hi_g, 1e-9 * f0, 200);
        let dg = (m.x - fc.gradiometric_amplitude).abs();
        fc.gradiometric_amplitude = m.x;
        // the two fluxes interact through tan(pi Phi_u / Phi0); alternate
        // until neither moves, then re-centre the frequency once more
        converged = du < 1e-8 * f0 && dg < 1e-8 * f0;
    }
    if !converged {
        flags.push("tune-up alternation hit its round cap".to_string());
    }
    let p = circuit_from_flux(&fc, spec, p0)?;
    let tau_sim = differential_delay_peak(&p)?.0;
    let w_now = resonant_frequency(&p)?;
    if (w_now / target - 1.0).abs() > 1e-6 {
        return Err(Error::solver("tune-up did not reach the target frequency"));
    }
    let tau = match opts.delay_floor {
        Some(floor) => tau_sim.max(floor),
        None => tau_sim,
    };
    let delay_limited = p0.omega * tau > FRAC_PI_2 * (1.0 + 1e-3);
    if (tau_sim / tau_target - 1.0).abs() > 1e-3 && !delay_limited {
        flags.push("delay target missed".to_string());
    }

    let (ccw_phase, ccw_m, ccw_c, cw_phase, cw_m, cw_c) = if delay_limited {
        flags.push("delay-limited".to_string());
        let (a, b) = law_optimal_phases(p0.omega * tau, &opts.weights);
        let ma = direction_metrics(&p, a, target_hz, Circulation::Ccw, opts)?;
        let mb = direction_metrics(&p, b, target_hz, Circulation::Cw, opts)?;
        (a, ma, direction_cost(&ma, &opts.weights), b, mb, direction_cost(&mb, &opts.weights))
    } else {
        let (a, ma, ca) = scan_phase(&p, target_hz, Circulation::Ccw, opts)?;
        let (b, mb, cb) = scan_phase(&p, target_hz, Circulation::Cw, opts)?;
        (a, ma, ca, b, mb, cb)
    };
    let point = |phi: f64, dir: Circulation, m: MetricsRecord, c: f64| OperatingPoint {
        flux: FluxControl { drive_phase_offset: phi, ..fc },
        circuit: CircuitParams { phi, ..p },
        modulation: p0.omega,
        phase: phi,
        direction: dir,
        metrics: m,
        cost: c,
    };
    Ok(TuneResult {
        cw: point(cw_phase, Circulation::Cw, cw_m, cw_c),
        ccw: point(ccw_phase, Circulation::Ccw, ccw_m, ccw_c),
        delay: tau,
        delay_limited,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseMap {
    /// Hz
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    /// [phase][frequency]; NaN where the solve failed
    pub s21_db: Vec<Vec<f64>>,
    pub s12_db: Vec<Vec<f64>>,
    pub failures: Vec<String>,
    /// Phase of the lowest-cost row for each direction.
    pub best_ccw_phase: Option<f64>,
    pub best_cw_phase: Option<f64>,
}

/// |S21| and |S12| over a probe-frequency by phase grid.
pub fn phase_sweep(p: &CircuitParams, freqs_hz: &[f64], phases: &[f64], pairing: BiasPairing, truncation: usize, w: &Weights) -> Result<PhaseMap> {
    if freqs_hz.is_empty() || phases.is_empty() {
        return Err(Error::domain("phase map needs non-empty grids"));
    }
    let ws: Vec<f64> = freqs_hz.iter().map(|f| TAU * f).collect();
    let rows: Vec<Result<_>> = phases
        .par_iter()
        .map(|&phi| {
            let net = build_circulator_network(&CircuitParams { phi, ..*p }, pairing)?;
            Ok(sweep(&net, &ws, truncation))
        })
        .collect();
    let mut s21 = Vec::with_capacity(phases.len());
    let mut s12 = Vec::with_capacity(phases.len());
    let mut failures = Vec::new();
    let mut best: [Option<(f64, f64)>; 2] = [None, None];
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        let mut a = Vec::with_capacity(ws.len());
        let mut b = Vec::with_capacity(ws.len());
        let mut ok = Vec::with_capacity(ws.len());
        for (j, cell) in row.into_iter().enumerate() {
            match cell {
                Ok(s) => {
                    a.push(20.0 * s.carrier(1, 0).norm().log10());
                    b.push(20.0 * s.carrier(0, 1).norm().log10());
                    ok.push(s);
                }
                Err(e) => {
                    a.push(f64::NAN);
                    b.push(f64::NAN);
                    failures.push(format!("phase {} frequency {}: {e}", phases[i], freqs_hz[j]));
                }
            }
        }
        if ok.len() == ws.len() && ws.len() >= 2 {
            for (k, dir) in [Circulation::Ccw, Circulation::Cw].into_iter().enumerate() {
                let m = metrics_from_sweep(&ws, &ok, dir, &MetricOptions::default())?;
                let c = direction_cost(&m, w);
                if best[k].map_or(true, |(bc, _)| c < bc) {
                    best[k] = Some((c, phases[i]));
                }
            }
        }
        s21.push(a);
        s12.push(b);
    }
    Ok(PhaseMap {
        frequencies: freqs_hz.to_vec(),
        phases: phases.to_vec(),
        s21_db: s21,
        s12_db: s12,
        failures,
        best_ccw_phase: best[0].map(|b| b.1),
        best_cw_phase: best[1].map(|b| b.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::DB_SENTINEL;
    use proptest::prelude::*;

    fn record(il: f64, iso: f64, bw_mhz: f64) -> MetricsRecord {
        MetricsRecord {
            direction: Circulation::Ccw,
            operation_frequency: 4e9,
            insertion_loss: il,
            max_isolation: iso,
            isolation_bandwidth_20db: bw_mhz * 1e6,
            sideband_suppression: 50.0,
            dissipation: 0.0,
            compression_1db: None,
            expansion_20db: None,
        }
    }

    #[test]
    fn ideal_circulator_dominates() {
        let w = Weights::default();
        let ideal = record(0.0, DB_SENTINEL, 300.0);
        let ideal_c = cost(&ideal, &ideal, &w).unwrap();
        for (il, iso, bw) in [(0.5, 30.0, 40.0), (0.0, 39.0, 300.0), (2.0, 60.0, 100.0)] {
            let r = record(il, iso, bw);
            assert!(cost(&r, &r, &w).unwrap() > ideal_c);
        }
        let reciprocal = record(3.0, 3.0, 0.0);
        assert!(cost(&reciprocal, &reciprocal, &w).unwrap() > 0.0);
        assert!(cost(&ideal, &ideal, &Weights { insertion_loss: 0.0, isolation: 0.0, bandwidth: 0.0, ..w }).is_err());
    }

    #[test]
    fn isolation_capped_inside_cost() {
        let w = Weights::default();
        assert_eq!(direction_cost(&record(1.0, 45.0, 10.0), &w), direction_cost(&record(1.0, 80.0, 10.0), &w));
    }

    #[test]
    fn law_phase_is_quarter_turn_without_floor() {
        let (a, b) = law_optimal_phases(FRAC_PI_2, &Weights::default());
        assert!((a - FRAC_PI_2).abs() < 0.02, "{a}");
        assert!((b - 3.0 * FRAC_PI_2).abs() < 0.02);
    }

    #[test]
    fn law_phase_moves_up_with_long_delay() {
        let om = TAU * 120e6;
        let (a, _) = law_optimal_phases(om * 3e-9, &Weights::default());
        assert!(a > FRAC_PI_2 && a > 0.6 * PI && a < 0.8 * PI, "{}", a / PI);
    }

    #[test]
    fn differential_delay_tracks_closed_form() {
        let p = CircuitParams { l0: 2.5e-9, delta0: 0.3, ..CircuitParams::default() };
        let (t, w) = differential_delay_peak(&p).unwrap();
        let want = 16.0 * p.z0 * p.c / (p.delta0 * p.delta0);
        assert!((t / want - 1.0).abs() < 0.15, "{t} {want}");
        assert!((w / resonant_frequency(&p).unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn ideal_tune_finds_quarter_turn_phases() {
        let p0 = CircuitParams { c: 1e-12, ..CircuitParams::default() };
        let r = tune(4.5e9, &p0, &SquidArraySpec::default(), &TuneOptions::default()).unwrap();
        assert!(!r.delay_limited);
        assert!((r.ccw.phase - FRAC_PI_2).abs() < 0.05, "{}", r.ccw.phase);
        assert!((r.cw.phase - 3.0 * FRAC_PI_2).abs() < 0.05, "{}", r.cw.phase);
        assert!((p0.omega * r.delay - FRAC_PI_2).abs() < 1e-3);
        let (a, b) = (r.ccw.metrics, r.cw.metrics);
        assert!((a.insertion_loss - b.insertion_loss).abs() < 1e-3);
        assert!((a.max_isolation.min(60.0) - b.max_isolation.min(60.0)).abs() < 1.0);
        assert!(a.insertion_loss < 1.0 && a.max_isolation > 20.0);
        assert_eq!(r.ccw.flux.uniform_flux, r.cw.flux.uniform_flux);
        assert_eq!(r.ccw.flux.gradiometric_amplitude, r.cw.flux.gradiometric_amplitude);
    }

    #[test]
    fn delay_floor_shifts_ccw_phase() {
        let p0 = CircuitParams::default();
        let opts = TuneOptions { delay_floor: Some(3e-9), ..TuneOptions::default() };
        let r = tune(4.5e9, &p0, &SquidArraySpec::default(), &opts).unwrap();
        assert!(r.delay_limited);
        assert!(r.flags.iter().any(|f| f == "delay-limited"));
        assert!(r.ccw.phase > 0.6 * PI && r.ccw.phase < 0.8 * PI, "{}", r.ccw.phase / PI);
        assert!((r.cw.phase - (TAU - r.ccw.phase)).abs() < 1e-12);
    }

    #[test]
    fn out_of_band_target_rejected() {
        let e = tune(12e9, &CircuitParams::default(), &SquidArraySpec::default(), &TuneOptions::default()).unwrap_err();
        assert!(e.to_string().starts_with("target out of tunable range"));
    }

    #[test]
    fn phase_map_has_two_regions() {
        let p = CircuitParams::lossless(2.5e-9, 0.62, 1e-12, 50.0, TAU * 120e6, 0.0);
        let f0 = resonant_frequency(&p).unwrap() / TAU;
        let freqs = linspace(f0 - 100e6, f0 + 100e6, 41);
        let phases: Vec<f64> = (0..24).map(|k| TAU * k as f64 / 24.0).collect();
        let map = phase_sweep(&p, &freqs, &phases, BiasPairing::Quadrature, 2, &Weights::default()).unwrap();
        let a = map.best_ccw_phase.unwrap();
        let b = map.best_cw_phase.unwrap();
        assert!((a - FRAC_PI_2).abs() < 0.3, "{a}");
        assert!(((b - a).abs() - PI).abs() < 0.3, "{a} {b}");
        // reciprocal at phi = 0
        for (x, y) in map.s21_db[0].iter().zip(&map.s12_db[0]) {
            assert!((x - y).abs() < 0.5);
        }
        assert!(map.failures.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn argmin_invariant_under_weight_scaling(
            recs in proptest::collection::vec((0.0f64..5.0, 0.0f64..70.0, 0.0f64..200.0), 2..12),
            k in 0.01f64..100.0,
        ) {
            let w = Weights::default();
            let ws = w.scaled(k);
            let rs: Vec<MetricsRecord> = recs.iter().map(|&(a, b, c)| record(a, b, c)).collect();
            let arg = |w: &Weights| {
                let mut best = 0;
                for i in 1..rs.len() {
                    if cost(&rs[i], &rs[i], w).unwrap() < cost(&rs[best], &rs[best], w).unwrap() {
                        best = i;
                    }
                }
                best
            };
            prop_assert_eq!(arg(&w), arg(&ws));
            let c = cost(&rs[0], &rs[1], &w).unwrap();
            prop_assert!((cost(&rs[0], &rs[1], &w.scaled(2.0)).unwrap() - 2.0 * c).abs() <= 1e-9 * c.abs().max(1.0));
        }
    }
}
