//! Experiment drivers behind the CLI subcommands. Each returns its artifacts
//! in memory; the caller writes them.

use std::f64::consts::{FRAC_PI_2, TAU};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::acceptance;
use crate::analysis::{db20, finite_db, photons_per_inverse_bandwidth, sideband_suppression, Circulation};
use crate::budgets::{
    added_noise_photons, bias_filter_impedance, coherence_lengths, default_bias_chain, johnson_noise_current, power_budget,
    signal_current_from_power, sns_link,
};
use crate::config::RunConfig;
use crate::constants::flux_quantum;
use crate::device::{flux_to_bridge_params, resonant_frequency, squid_array_inductance};
use crate::error::{Error, Result};
use crate::floquet::{group_delay, linspace, refined_peak, solve, sweep_all};
use crate::network::{build_circulator_network, build_static_network};
use crate::phasor::{arm_stages, canonical_gyrator, propagate_two_arm_network, Direction};
use crate::report::{fmt_f, json_report, plot_stub, Artifact, Csv};
use crate::transient::{find_compression_point, find_expansion_point, power_sweep, watts_to_dbm, PowerHandling};
use crate::tuneup::{phase_sweep, tune, OperatingPoint, TuneResult};
use crate::{CircuitParams, NormalMetalFilm, SpectralSignal};

pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// False when a built-in assertion or acceptance criterion failed.
    pub passed: bool,
}

/// Run the configured experiment; `log` receives progress lines.
pub fn run(cfg: &RunConfig, log: &mut dyn FnMut(String)) -> Result<RunOutput> {
    cfg.validate()?;
    let mut out = Outputs::new(cfg);
    let passed = match cfg.experiment.name.as_str() {
        "phasor-demo" => phasor_demo(cfg, &mut out)?,
        "sweep-sparams" => sweep_sparams(cfg, &mut out)?,
        "delay-map" => delay_map(cfg, &mut out)?,
        "phase-map" => phase_map(cfg, &mut out)?,
        "amp-map" => amp_map(cfg, &mut out)?,
        "tuneup" => tuneup(cfg, &mut out)?,
        "spectrum" => spectrum(cfg, &mut out)?,
        "power-sweep" => power_sweep_run(cfg, &mut out, log)?,
        "metadata" => metadata(cfg, &mut out, log)?,
        "noise-budget" => noise_budget(cfg, &mut out)?,
        "accept" => accept(&mut out, log)?,
        other => return Err(Error::config(format!("unknown experiment '{other}'"))),
    };
    Ok(RunOutput { artifacts: out.finish(), passed })
}

struct Outputs<'a> {
    cfg: &'a RunConfig,
    files: Vec<Artifact>,
    csv_names: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Self { cfg, files: Vec::new(), csv_names: Vec::new() }
    }

    fn csv(&mut self, name: &str, t: &Csv) {
        self.csv_names.push(name.to_string());
        self.files.push(Artifact { name: name.to_string(), contents: t.render(self.cfg) });
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        self.files.push(Artifact { name: name.to_string(), contents: json_report(self.cfg, v)? });
        Ok(())
    }

    fn finish(mut self) -> Vec<Artifact> {
        if self.cfg.output.plot_stub && !self.csv_names.is_empty() {
            let names: Vec<&str> = self.csv_names.iter().map(|s| s.as_str()).collect();
            let name = format!("plot_{}.py", self.cfg.experiment.name.replace('-', "_"));
            self.files.push(Artifact { name, contents: plot_stub(&self.cfg.experiment.name, &names) });
        }
        self.files
    }
}

fn db(x: num_complex::Complex<f64>) -> String {
    fmt_f(finite_db(db20(x.norm())))
}

fn tuned(cfg: &RunConfig) -> Result<TuneResult> {
    let opts = cfg.solver.tune_options(cfg.device.pairing);
    tune(cfg.device.target_frequency, &cfg.device.base_circuit(), &cfg.device.spec(), &opts)
}

fn pick(r: &TuneResult, dir: Circulation) -> &OperatingPoint {
    match dir {
        Circulation::Ccw => &r.ccw,
        Circulation::Cw => &r.cw,
    }
}

/// Probe frequencies (Hz) centred on `center`.
fn probe_grid(cfg: &RunConfig, center: f64) -> Vec<f64> {
    let half = cfg.experiment.probe_span / 2.0;
    linspace(center - half, center + half, cfg.experiment.probe_points)
}

fn phasor_demo(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let om = TAU * cfg.device.modulation_frequency;
    let (a, b) = canonical_gyrator(om);
    let input = SpectralSignal::unit_tone(TAU * cfg.device.target_frequency, om);
    let split = SpectralSignal::tone(input.reference_frequency, om, input.amplitude(0) * std::f64::consts::FRAC_1_SQRT_2);
    let mut t = Csv::new(&["direction", "arm", "stage", "component", "amplitude", "phase_rad"]);
    let mut push = |dir: &str, arm: &str, stage: &str, s: &SpectralSignal| {
        for (m, z) in &s.components {
            t.push(vec![dir.into(), arm.into(), stage.into(), m.to_string(), fmt_f(z.norm()), fmt_f(z.arg())]);
        }
    };
    for (dir, d) in [("forward", Direction::Forward), ("backward", Direction::Backward)] {
        push(dir, "-", "input", &input);
        for (arm, cfg_arm) in [("a", &a), ("b", &b)] {
            let [m1, del, m2] = arm_stages(cfg_arm, &split, d);
            push(dir, arm, "split", &split);
            push(dir, arm, "multiplied", &m1);
            push(dir, arm, "delayed", &del);
            push(dir, arm, "multiplied-again", &m2);
        }
        push(dir, "-", "output", &propagate_two_arm_network(&a, &b, &input, d));
    }
    let (e21, e12, sb) = acceptance::gyrator_errors();
    let ok = e21 < 1e-12 && e12 < 1e-12 && sb < 1e-12;
    out.csv("phasor_demo.csv", &t);
    out.json(
        "phasor_demo.json",
        &json!({
            "s21_error": e21,
            "s12_error": e12,
            "largest_sideband": sb,
            "s21_is_minus_one": e21 < 1e-12,
            "s12_is_plus_one": e12 < 1e-12,
        }),
    )?;
    Ok(ok)
}

fn sweep_sparams(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let r = tuned(cfg)?;
    let freqs = probe_grid(cfg, cfg.device.target_frequency);
    let ws: Vec<f64> = freqs.iter().map(|f| TAU * f).collect();
    let n = cfg.solver.truncation;
    let cw = sweep_all(&build_circulator_network(&r.cw.circuit, cfg.device.pairing)?, &ws, n)?;
    let ccw = sweep_all(&build_circulator_network(&r.ccw.circuit, cfg.device.pairing)?, &ws, n)?;
    let mut t = Csv::new(&["f_Hz", "S21_dB_cw", "S12_dB_cw", "S11_dB", "S22_dB", "S21_dB_ccw", "S12_dB_ccw", "S11_dB_ccw", "S22_dB_ccw"]);
    for (i, f) in freqs.iter().enumerate() {
        let (a, b) = (&cw[i], &ccw[i]);
        t.push(vec![
            fmt_f(*f),
            db(a.carrier(1, 0)),
            db(a.carrier(0, 1)),
            db(a.carrier(0, 0)),
            db(a.carrier(1, 1)),
            db(b.carrier(1, 0)),
            db(b.carrier(0, 1)),
            db(b.carrier(0, 0)),
            db(b.carrier(1, 1)),
        ]);
    }
    out.csv("sweep_sparams.csv", &t);
    out.json("sweep_sparams.json", &r)?;
    Ok(true)
}

#[derive(Serialize)]
struct DelayPeak {
    uniform_flux: f64,
    gradiometric_flux: f64,
    l0: f64,
    /// per-inductor static imbalance
    imbalance: f64,
    peak_frequency: f64,
    peak_delay: f64,
    /// closed-form resonance for a drive of twice the static imbalance; null where undefined
    predicted_frequency: Option<f64>,
}

fn delay_map(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let spec = cfg.device.spec();
    let base = cfg.device.base_circuit();
    let f0 = flux_quantum::<f64>();
    let freqs = cfg.experiment.delay_map_frequency.values();
    let ws: Vec<f64> = freqs.iter().map(|f| TAU * f).collect();
    let mut points = Vec::new();
    for &u in &cfg.experiment.delay_map_uniform {
        for g in cfg.experiment.delay_map_gradiometric.values() {
            points.push((u, g));
        }
    }
    let maps: Vec<Result<Option<(Vec<f64>, DelayPeak)>>> = points
        .par_iter()
        .map(|&(u, g)| {
            if !(u.abs() + g.abs() < 0.5) {
                return Ok(None);
            }
            let yp = 1.0 / squid_array_inductance(&spec, (u + g) * f0)?;
            let ym = 1.0 / squid_array_inductance(&spec, (u - g) * f0)?;
            let l0 = 2.0 / (yp + ym);
            let d = (yp - ym) / (yp + ym);
            let p = CircuitParams { l0, ..base };
            // the static flux imbalances the bridges with the drive's sign pattern
            let net = build_static_network(&p, [d, d, -d, -d])?;
            let s: Vec<_> = sweep_all(&net, &ws, 0)?.iter().map(|m| m.carrier(1, 0)).collect();
            let tau = group_delay(&ws, &s, 0.0)?;
            let (w, t) = refined_peak(&ws, &tau);
            let predicted = resonant_frequency(&CircuitParams { l0, delta0: 2.0 * d, ..base }).ok().map(|w| w / TAU);
            let peak = DelayPeak {
                uniform_flux: u,
                gradiometric_flux: g,
                l0,
                imbalance: d,
                peak_frequency: w / TAU,
                peak_delay: t,
                predicted_frequency: predicted,
            };
            Ok(Some((tau, peak)))
        })
        .collect();
    let mut t = Csv::new(&["uniform_flux_phi0", "gradiometric_flux_phi0", "f_Hz", "delay_s"]);
    let mut peaks = Vec::new();
    let mut skipped = 0;
    for (m, &(u, g)) in maps.into_iter().zip(&points) {
        match m? {
            Some((tau, peak)) => {
                for (f, d) in freqs.iter().zip(&tau) {
                    t.push(vec![fmt_f(u), fmt_f(g), fmt_f(*f), fmt_f(*d)]);
                }
                peaks.push(peak);
            }
            None => skipped += 1,
        }
    }
    out.csv("delay_map.csv", &t);
    out.json("delay_map.json", &json!({ "peaks": peaks, "skipped_out_of_model_range": skipped }))?;
    Ok(true)
}

fn phase_map(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let r = tuned(cfg)?;
    let freqs = probe_grid(cfg, cfg.device.target_frequency);
    let phases = cfg.experiment.phases.values();
    let m = phase_sweep(&r.ccw.circuit, &freqs, &phases, cfg.device.pairing, cfg.solver.truncation, &cfg.solver.tune.weights)?;
    let mut t = Csv::new(&["phase_rad", "f_Hz", "S21_dB", "S12_dB"]);
    for (i, phi) in phases.iter().enumerate() {
        for (j, f) in freqs.iter().enumerate() {
            t.push(vec![fmt_f(*phi), fmt_f(*f), fmt_f(m.s21_db[i][j]), fmt_f(m.s12_db[i][j])]);
        }
    }
    out.csv("phase_map.csv", &t);
    out.json(
        "phase_map.json",
        &json!({
            "tuned_ccw_phase": r.ccw.phase,
            "tuned_cw_phase": r.cw.phase,
            "best_ccw_phase_on_grid": m.best_ccw_phase,
            "best_cw_phase_on_grid": m.best_cw_phase,
            "failures": m.failures,
        }),
    )?;
    Ok(true)
}

fn direction_phase(dir: Circulation) -> f64 {
    match dir {
        Circulation::Ccw => FRAC_PI_2,
        Circulation::Cw => 3.0 * FRAC_PI_2,
    }
}

fn amp_map(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let spec = cfg.device.spec();
    let base = cfg.device.base_circuit();
    let phi = direction_phase(cfg.experiment.direction);
    let freqs = cfg.experiment.amp_map_frequency.values();
    let ws: Vec<f64> = freqs.iter().map(|f| TAU * f).collect();
    let gs = cfg.experiment.amp_map_gradiometric.values();
    let rows: Vec<Result<Option<_>>> = gs
        .par_iter()
        .map(|&g| {
            let fc = cfg.flux(cfg.device.uniform_flux, g, phi);
            if !fc.within_model_range() {
                return Ok(None);
            }
            let (l0, delta0) = flux_to_bridge_params(&fc, &spec)?;
            let p = CircuitParams { l0, delta0, phi, ..base };
            let s = sweep_all(&build_circulator_network(&p, cfg.device.pairing)?, &ws, cfg.solver.truncation)?;
            Ok(Some((l0, delta0, s)))
        })
        .collect();
    let mut t = Csv::new(&["gradiometric_flux_phi0", "delta0", "l0_H", "f_Hz", "S21_dB", "S12_dB"]);
    let mut skipped = Vec::new();
    for (row, g) in rows.into_iter().zip(&gs) {
        match row? {
            Some((l0, d, s)) => {
                for (f, m) in freqs.iter().zip(&s) {
                    t.push(vec![fmt_f(*g), fmt_f(d), fmt_f(l0), fmt_f(*f), db(m.carrier(1, 0)), db(m.carrier(0, 1))]);
                }
            }
            None => skipped.push(*g),
        }
    }
    out.csv("amp_map.csv", &t);
    out.json("amp_map.json", &json!({ "phase": phi, "skipped_gradiometric_flux": skipped }))?;
    Ok(true)
}

fn tuneup(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let r = tuned(cfg)?;
    let f0 = flux_quantum::<f64>();
    let mut t = Csv::new(&[
        "direction",
        "phase_rad",
        "uniform_flux_phi0",
        "gradiometric_flux_phi0",
        "l0_H",
        "delta0",
        "f_op_Hz",
        "insertion_loss_dB",
        "max_isolation_dB",
        "bandwidth_20dB_Hz",
        "sideband_suppression_dB",
        "dissipation_dB",
        "cost",
    ]);
    for op in [&r.ccw, &r.cw] {
        let m = &op.metrics;
        t.push(vec![
            op.direction.label().to_string(),
            fmt_f(op.phase),
            fmt_f(op.flux.uniform_flux / f0),
            fmt_f(op.flux.gradiometric_amplitude / f0),
            fmt_f(op.circuit.l0),
            fmt_f(op.circuit.delta0),
            fmt_f(m.operation_frequency),
            fmt_f(m.insertion_loss),
            fmt_f(m.max_isolation),
            fmt_f(m.isolation_bandwidth_20db),
            fmt_f(m.sideband_suppression),
            fmt_f(m.dissipation),
            fmt_f(op.cost),
        ]);
    }
    out.csv("tuneup.csv", &t);
    out.json("tuneup.json", &r)?;
    Ok(true)
}

fn spectrum(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let r = tuned(cfg)?;
    let op = pick(&r, cfg.experiment.direction);
    let (inp, o) = op.direction.through();
    let w = TAU * op.metrics.operation_frequency;
    let s = solve(&build_circulator_network(&op.circuit, cfg.device.pairing)?, w, cfg.solver.truncation)?;
    let carrier = s.carrier(o, inp).norm_sqr();
    let mut t = Csv::new(&["sideband", "f_Hz", "relative_dB", "transmission_dB"]);
    for m in s.sidebands() {
        let p = s.get(m, o, inp).norm_sqr();
        let f = (w + m as f64 * op.modulation) / TAU;
        t.push(vec![m.to_string(), fmt_f(f), fmt_f(finite_db(10.0 * (p / carrier).log10())), fmt_f(finite_db(10.0 * p.log10()))]);
    }
    out.csv("spectrum.csv", &t);
    out.json(
        "spectrum.json",
        &json!({
            "direction": op.direction,
            "probe_frequency": w / TAU,
            "sideband_suppression_dB": sideband_suppression(&s, o, inp)?,
        }),
    )?;
    Ok(true)
}

fn power_handling(cfg: &RunConfig, op: &OperatingPoint) -> Result<(PowerHandling, PowerHandling)> {
    let net = build_circulator_network(&op.circuit, cfg.device.pairing)?;
    let opts = cfg.solver.transient.options(cfg.device.spec(), Some(&op.flux));
    let w = TAU * op.metrics.operation_frequency;
    let c = find_compression_point(&net, w, op.direction, &opts, &cfg.solver.power_search)?;
    let x = find_expansion_point(&net, w, op.direction, &opts, &cfg.solver.power_search)?;
    Ok((c, x))
}

fn power_sweep_run(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn FnMut(String)) -> Result<bool> {
    let r = tuned(cfg)?;
    let op = pick(&r, cfg.experiment.direction);
    let net = build_circulator_network(&op.circuit, cfg.device.pairing)?;
    let opts = cfg.solver.transient.options(cfg.device.spec(), Some(&op.flux));
    let w = TAU * op.metrics.operation_frequency;
    let powers = cfg.experiment.powers.values();
    log(format!("power sweep: {} points at {:.6} GHz", powers.len(), w / TAU / 1e9));
    let pts = power_sweep(&net, w, op.direction, &powers, &opts);
    let mut t = Csv::new(&["P_in_W", "P_in_dBm", "transmission_dB", "reverse_dB", "junction_overdriven"]);
    for p in pts {
        let p = p?;
        t.push(vec![fmt_f(p.power), fmt_f(watts_to_dbm(p.power)), fmt_f(p.transmission_db), fmt_f(-p.isolation_db), p.junction_overdriven.to_string()]);
    }
    log("searching for the compression and expansion points".to_string());
    let (c, x) = power_handling(cfg, op)?;
    out.csv("power_sweep.csv", &t);
    out.json("power_sweep.json", &json!({ "operating_point": op, "compression_1db": c, "expansion_20db": x }))?;
    Ok(true)
}

fn metadata(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn FnMut(String)) -> Result<bool> {
    let mut t = Csv::new(&[
        "target_Hz",
        "direction",
        "phase_rad",
        "f_op_Hz",
        "insertion_loss_dB",
        "dissipation_dB",
        "max_isolation_dB",
        "bandwidth_20dB_Hz",
        "sideband_suppression_dB",
        "P1dB_W",
        "P1dB_dBm",
        "P20dB_W",
        "P20dB_dBm",
    ]);
    let mut failures = Vec::new();
    let mut flags = Vec::new();
    for &target in &cfg.experiment.targets {
        log(format!("tuning to {:.4} GHz", target / 1e9));
        let mut c = cfg.clone();
        c.device.target_frequency = target;
        let r = match tuned(&c) {
            Ok(r) => r,
            Err(e) => {
                failures.push(json!({ "target": target, "error": e.to_string() }));
                continue;
            }
        };
        if !r.flags.is_empty() {
            flags.push(json!({ "target": target, "flags": r.flags }));
        }
        for op in [&r.cw, &r.ccw] {
            let m = &op.metrics;
            let (p1, p20) = if cfg.experiment.power_handling {
                let (a, b) = power_handling(&c, op)?;
                (a.power, b.power)
            } else {
                (f64::NAN, f64::NAN)
            };
            t.push(vec![
                fmt_f(target),
                op.direction.label().to_string(),
                fmt_f(op.phase),
                fmt_f(m.operation_frequency),
                fmt_f(m.insertion_loss),
                fmt_f(m.dissipation),
                fmt_f(m.max_isolation),
                fmt_f(m.isolation_bandwidth_20db),
                fmt_f(m.sideband_suppression),
                fmt_f(p1),
                fmt_f(watts_to_dbm(p1)),
                fmt_f(p20),
                fmt_f(watts_to_dbm(p20)),
            ]);
        }
    }
    out.csv("metadata.csv", &t);
    out.json("metadata.json", &json!({ "failures": failures, "flags": flags }))?;
    Ok(true)
}

fn noise_budget(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let d = &cfg.device;
    let spec = d.spec();
    let r = tuned(cfg)?;
    let op = &r.ccw;
    let (inp, o) = op.direction.through();
    let w = TAU * op.metrics.operation_frequency;
    let s21 = |p: &CircuitParams| -> Result<f64> {
        Ok(solve(&build_circulator_network(p, d.pairing)?, w, cfg.solver.truncation)?.carrier(o, inp).norm())
    };
    // derivatives of |S21| with respect to bias current and drive phase
    let hg = 1e-4 * flux_quantum::<f64>();
    let at_g = |g: f64| -> Result<f64> {
        let fc = crate::FluxControl { gradiometric_amplitude: g, ..op.flux };
        let (l0, delta0) = flux_to_bridge_params(&fc, &spec)?;
        s21(&CircuitParams { l0, delta0, ..op.circuit })
    };
    let g0 = op.flux.gradiometric_amplitude;
    let ds_dphi_g = (at_g(g0 + hg)? - at_g(g0 - hg)?) / (2.0 * hg);
    let ds_dig = ds_dphi_g * d.bias_mutual_inductance;
    let hp = 1e-3;
    let ds_dphi = (s21(&CircuitParams { phi: op.phase + hp, ..op.circuit })? - s21(&CircuitParams { phi: op.phase - hp, ..op.circuit })?) / (2.0 * hp);
    let drive_current = g0 / d.bias_mutual_inductance;
    let p1db = match cfg.experiment.compression_power {
        Some(p) => p,
        None => power_handling(cfg, op)?.0.power,
    };
    let i1db = signal_current_from_power(p1db, d.z0);

    let mut noise = Csv::new(&["line_temperature_K", "johnson_A2_per_Hz", "added_photons", "amplitude_noise_fraction"]);
    for &temp in &cfg.experiment.line_temperatures {
        let n = added_noise_photons(ds_dig.abs(), ds_dphi.abs(), drive_current, i1db, temp, d.z0, w)?;
        noise.push(vec![fmt_f(temp), fmt_f(johnson_noise_current(temp, d.z0)?), fmt_f(n.photons), fmt_f(n.amplitude_noise_fraction)]);
    }

    let b = power_budget(&default_bias_chain())?;
    let mut budget = Csv::new(&[
        "stage_K",
        "bias_current_A",
        "heat_load_W",
        "attenuator_dissipation_W",
        "cooling_power_W",
        "margin_W",
        "exceeds_cooling_power",
    ]);
    for s in &b.stages {
        budget.push(vec![
            fmt_f(s.temperature),
            fmt_f(s.bias_current),
            fmt_f(s.heat_load),
            fmt_f(s.attenuator_dissipation),
            fmt_f(s.cooling_power),
            fmt_f(s.margin),
            s.exceeds_cooling_power.to_string(),
        ]);
    }

    let film = NormalMetalFilm::default();
    let (xi_c, xi_d) = coherence_lengths(&film)?;
    let link = sns_link(&film, op.circuit.l0)?;
    out.csv("noise_budget.csv", &noise);
    out.csv("power_budget.csv", &budget);
    out.json(
        "noise_budget.json",
        &json!({
            "operation_frequency": op.metrics.operation_frequency,
            "ds21_d_bias_current": ds_dig,
            "ds21_d_phase": ds_dphi,
            "bias_current": drive_current,
            "compression_power": p1db,
            "signal_current_1db": i1db,
            "photons_per_inverse_bandwidth": photons_per_inverse_bandwidth(p1db, w, op.metrics.isolation_bandwidth_20db),
            "filter_impedance_at_modulation": bias_filter_impedance(d.filter_inductance, d.modulation_frequency),
            "filter_impedance_at_operation": bias_filter_impedance(d.filter_inductance, op.metrics.operation_frequency),
            "coherence_length_clean": xi_c,
            "coherence_length_dirty": xi_d,
            "sns_link": link,
            "power_budget": b,
        }),
    )?;
    Ok(true)
}

fn accept(out: &mut Outputs, log: &mut dyn FnMut(String)) -> Result<bool> {
    let outcomes = acceptance::run_all(|c, o, dt| log(acceptance::summary_line(c, o, dt)));
    let mut t = Csv::new(&["criterion", "title", "status", "detail"]);
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        t.push(vec![o.id.to_string(), o.title.to_string(), status.to_string(), format!("\"{}\"", o.detail.replace('"', "'"))]);
    }
    let passed = outcomes.iter().all(|o| o.passed);
    out.csv("acceptance.csv", &t);
    out.json("acceptance.json", &json!({ "passed": passed, "criteria": outcomes }))?;
    Ok(passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(name: &str) -> RunConfig {
        let mut c = RunConfig::default();
        c.experiment.name = name.to_string();
        c
    }

    fn run_quiet(c: &RunConfig) -> RunOutput {
        run(c, &mut |_| {}).unwrap()
    }

    #[test]
    fn phasor_demo_asserts_gyrator() {
        let r = run_quiet(&with("phasor-demo"));
        assert!(r.passed);
        let names: Vec<&str> = r.artifacts.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["phasor_demo.csv", "phasor_demo.json", "plot_phasor_demo.py"]);
        let csv = &r.artifacts[0].contents;
        let out: Vec<&str> = csv.lines().filter(|l| l.starts_with("forward,-,output,0,")).collect();
        assert_eq!(out.len(), 1);
        // S21 = -1: unit amplitude, phase pi
        let f: Vec<f64> = out[0].split(',').skip(4).map(|x| x.parse().unwrap()).collect();
        assert!((f[0] - 1.0).abs() < 1e-8 && (f[1].abs() - std::f64::consts::PI).abs() < 1e-8);
    }

    #[test]
    fn runs_are_byte_identical() {
        let mut c = with("amp-map");
        c.experiment.amp_map_gradiometric = crate::config::Grid::new(0.0, 0.1, 3);
        c.experiment.amp_map_frequency = crate::config::Grid::new(3.9e9, 4.2e9, 7);
        let a = run_quiet(&c);
        let b = run_quiet(&c);
        assert_eq!(a.artifacts.len(), b.artifacts.len());
        for (x, y) in a.artifacts.iter().zip(&b.artifacts) {
            assert_eq!(x.contents, y.contents);
        }
        // header rows plus 3 x 7 data rows
        assert_eq!(a.artifacts[0].contents.lines().count(), 4 + 21);
    }

    #[test]
    fn delay_map_peaks_move_with_flux() {
        let mut c = with("delay-map");
        c.experiment.delay_map_uniform = vec![0.33];
        c.experiment.delay_map_gradiometric = crate::config::Grid::new(0.02, 0.06, 3);
        c.experiment.delay_map_frequency = crate::config::Grid::new(3.5e9, 7.0e9, 701);
        c.output.plot_stub = false;
        let r = run_quiet(&c);
        let v: serde_json::Value = serde_json::from_str(&r.artifacts[1].contents).unwrap();
        let peaks = v["results"]["peaks"].as_array().unwrap();
        assert_eq!(peaks.len(), 3);
        let delay: Vec<f64> = peaks.iter().map(|p| p["peak_delay"].as_f64().unwrap()).collect();
        // stronger static imbalance couples the resonance harder: shorter delay
        assert!(delay[0] > delay[1] && delay[1] > delay[2], "{delay:?}");
        assert!(delay.iter().all(|d| *d > 1e-9 && *d < 1e-6));
    }

    #[test]
    fn sweep_sparams_columns() {
        let mut c = with("sweep-sparams");
        c.experiment.probe_points = 5;
        c.output.plot_stub = false;
        let r = run_quiet(&c);
        let header = r.artifacts[0].contents.lines().nth(3).unwrap().to_string();
        assert!(header.starts_with("f_Hz,S21_dB_cw,S12_dB_cw,S11_dB,S22_dB,S21_dB_ccw"));
        assert_eq!(r.artifacts[0].contents.lines().count(), 4 + 5);
    }

    #[test]
    fn spectrum_shows_suppressed_sidebands() {
        let r = run_quiet(&with("spectrum"));
        let v: serde_json::Value = serde_json::from_str(&r.artifacts[1].contents).unwrap();
        assert!(v["results"]["sideband_suppression_dB"].as_f64().unwrap() > 20.0);
        let rows: Vec<&str> = r.artifacts[0].contents.lines().skip(4).collect();
        assert_eq!(rows.len(), 2 * 3 + 1);
        assert!(rows[3].starts_with("0,") && rows[3].contains(",0.00000000e0,"));
    }

    #[test]
    fn noise_budget_with_given_compression() {
        let mut c = with("noise-budget");
        c.experiment.compression_power = Some(1e-12);
        let r = run_quiet(&c);
        let names: Vec<&str> = r.artifacts.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["noise_budget.csv", "power_budget.csv", "noise_budget.json", "plot_noise_budget.py"]);
        let rows: Vec<Vec<f64>> = r.artifacts[0]
            .contents
            .lines()
            .skip(4)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect();
        // photons scale with line temperature
        assert!((rows[1][2] / rows[0][2] - 7.0 / 300.0).abs() < 1e-8);
        assert!(r.artifacts[1].contents.contains("5.00000000e-1"));
    }
}
