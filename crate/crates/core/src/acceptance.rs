//! The acceptance suite. Each criterion returns a deterministic verdict and
//! a detail line; wall-clock time is measured by the caller and never enters
//! the written report, so repeated runs produce identical files.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{circulation_band, db20, gamma_balanced, photons_per_inverse_bandwidth, Circulation};
use crate::budgets::{added_noise_photons, bias_filter_impedance, coherence_lengths, default_bias_chain, power_budget};
use crate::device::{resonant_delay_duration, resonant_frequency};
use crate::error::Result;
use crate::floquet::{group_delay, linspace, refined_peak, solve, sweep_all, HarmonicScatteringMatrix};
use crate::network::{build_circulator_network, rotating_frame_equivalent, BiasPairing};
use crate::phasor::{canonical_gyrator, propagate_two_arm_network, Direction};
use crate::transient::{find_compression_point, find_expansion_point, simulate, Drive, PowerBound, PowerSearch, TransientOptions};
use crate::tuneup::{differential_delay_peak, tune, TuneOptions, TuneResult};
use crate::{CircuitParams, NormalMetalFilm, SpectralSignal, SquidArraySpec};

#[derive(Debug, Clone, Copy)]
pub struct Criterion {
    pub id: u32,
    pub title: &'static str,
    /// Wall-clock budget in seconds.
    pub budget: f64,
    check: fn() -> Result<Verdict>,
}

struct Verdict {
    passed: bool,
    detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, title: "ideal gyrator algebra", budget: 1.0, check: gyrator },
    Criterion { id: 2, title: "generalized phase law", budget: 1.0, check: phase_law },
    Criterion { id: 3, title: "balanced-bridge closed form", budget: 5.0, check: balanced_bridge },
    Criterion { id: 4, title: "resonance and delay formulas", budget: 30.0, check: resonance_and_delay },
    Criterion { id: 5, title: "transient and harmonic-balance agreement", budget: 600.0, check: oracle_equivalence },
    Criterion { id: 6, title: "circulation structure", budget: 300.0, check: circulation },
    Criterion { id: 7, title: "reconfigurability symmetry", budget: 120.0, check: reconfigurability },
    Criterion { id: 8, title: "tune-up behaviour", budget: 600.0, check: tuneup_behaviour },
    Criterion { id: 9, title: "compression order of magnitude", budget: 1200.0, check: compression },
    Criterion { id: 10, title: "engineering formulas", budget: 5.0, check: engineering },
];

/// Criteria whose failure is a measured property of the model rather than
/// a defect; the suite still reports them as FAIL.
pub const KNOWN_MODEL_LIMITS: [u32; 1] = [9];

const MODULATION: f64 = TAU * 120e6;
const SEED: u64 = 20_171_114;

impl Criterion {
    pub fn run(&self) -> (Outcome, Duration) {
        let t = Instant::now();
        let v = (self.check)().unwrap_or_else(|e| Verdict { passed: false, detail: format!("error: {e}") });
        (Outcome { id: self.id, title: self.title, passed: v.passed, detail: v.detail }, t.elapsed())
    }
}

/// Run every criterion in order, reporting each as it finishes.
pub fn run_all(mut report: impl FnMut(&Criterion, &Outcome, Duration)) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .map(|c| {
            let (o, d) = c.run();
            report(c, &o, d);
            o
        })
        .collect()
}

/// One console line: status, id, title, runtime against budget, detail.
pub fn summary_line(c: &Criterion, o: &Outcome, elapsed: Duration) -> String {
    let secs = elapsed.as_secs_f64();
    let over = secs > c.budget;
    let status = if o.passed && !over { "PASS" } else { "FAIL" };
    let budget = if over { " OVER BUDGET" } else { "" };
    format!("{status} {:>2} {} ({secs:.2} s of {:.0} s{budget}): {}", c.id, c.title, c.budget, o.detail)
}

fn e(x: f64) -> String {
    format!("{x:.3e}")
}

/// Largest deviation of the ideal network from S21 = -1, S12 = +1 with no
/// sidebands: (forward error, backward error, largest sideband).
pub fn gyrator_errors() -> (f64, f64, f64) {
    let (a, b) = canonical_gyrator(MODULATION);
    let input = SpectralSignal::unit_tone(TAU * 4.5e9, MODULATION);
    let fwd = propagate_two_arm_network(&a, &b, &input, Direction::Forward);
    let bwd = propagate_two_arm_network(&a, &b, &input, Direction::Backward);
    let sb = |s: &SpectralSignal| s.components.iter().filter(|(m, _)| **m != 0).map(|(_, a)| a.norm()).fold(0.0, f64::max);
    ((fwd.amplitude(0) + 1.0).norm(), (bwd.amplitude(0) - 1.0).norm(), sb(&fwd).max(sb(&bwd)))
}

fn gyrator() -> Result<Verdict> {
    let (f, b, s) = gyrator_errors();
    Ok(Verdict { passed: f < 1e-12 && b < 1e-12 && s < 1e-12, detail: format!("|S21+1| {}, |S12-1| {}, sidebands {}", e(f), e(b), e(s)) })
}

fn phase_law() -> Result<Verdict> {
    use crate::phasor::generalized_transmission as g;
    let cases = [((FRAC_PI_2, FRAC_PI_2), (1.0, 0.0)), ((FRAC_PI_2, 3.0 * FRAC_PI_2), (0.0, 1.0)), ((FRAC_PI_2, 0.0), (0.5, 0.5))];
    let mut worst = 0.0f64;
    for ((wt, phi), (a, b)) in cases {
        let (x, y) = g(wt, phi);
        worst = worst.max((x - a).abs()).max((y - b).abs());
    }
    // pi/2 itself is rounded, so exact means within one unit of the last place
    Ok(Verdict { passed: worst <= f64::EPSILON, detail: format!("largest deviation {}", e(worst)) })
}

fn balanced_bridge() -> Result<Verdict> {
    let p = CircuitParams { delta0: 0.0, ..CircuitParams::default() };
    let net = build_circulator_network(&p, BiasPairing::Quadrature)?;
    let mut worst = 0.0f64;
    for f in linspace(1e9, 10e9, 50) {
        let w = TAU * f;
        let s = solve(&net, w, 1)?;
        let g = gamma_balanced(w, p.l0, p.z0);
        for nu in 0..4 {
            worst = worst.max((s.carrier(nu, nu) - g).norm() / g.norm());
        }
    }
    Ok(Verdict { passed: worst < 1e-9, detail: format!("largest relative error {} over 50 frequencies", e(worst)) })
}

/// Peak group delay of single-ended port 1 to port 2 transmission in the
/// static equivalent network, and its frequency.
fn static_s21_delay_peak(p: &CircuitParams) -> Result<(f64, f64)> {
    let net = rotating_frame_equivalent(p)?;
    let w0 = resonant_frequency(p)?;
    let tau = resonant_delay_duration(p)?;
    let half = (20.0 / tau).min(0.3 * w0);
    let ws = linspace(w0 - half, w0 + half, 801);
    let s: Vec<_> = sweep_all(&net, &ws, 0)?.iter().map(|m| m.carrier(1, 0)).collect();
    let d = group_delay(&ws, &s, 0.0)?;
    let (w, t) = refined_peak(&ws, &d);
    Ok((t, w))
}

fn resonance_and_delay() -> Result<Verdict> {
    let mut ok = true;
    let mut parts = Vec::new();
    for delta0 in [0.1, 0.2, 0.3] {
        let p = CircuitParams { l0: 1e-9, c: 1e-12, delta0, ..CircuitParams::default() };
        let w0 = resonant_frequency(&p)?;
        let (_, w_sim) = differential_delay_peak(&p)?;
        let (t_sim, _) = static_s21_delay_peak(&p)?;
        let t0 = resonant_delay_duration(&p)?;
        let dw = (w_sim / w0 - 1.0).abs();
        let ratio = t_sim / t0;
        ok &= dw < 5e-3 && ratio > 0.5 && ratio < 2.0;
        parts.push(format!("delta0 {delta0}: resonance off by {}, delay {} s = {:.3} x closed form", e(dw), e(t_sim), ratio));
    }
    Ok(Verdict { passed: ok, detail: parts.join("; ") })
}

/// Randomized lossless operating points with delta0 <= 0.2, probed near resonance.
pub fn oracle_points(n: usize) -> Vec<(CircuitParams, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..n)
        .map(|_| {
            let l0 = rng.gen_range(1.0e-9..2.5e-9);
            let delta0 = rng.gen_range(0.1..0.2);
            let phi = rng.gen_range(0.0..TAU);
            let p = CircuitParams::lossless(l0, delta0, 1e-12, 50.0, MODULATION, phi);
            let w0 = resonant_frequency(&p).expect("valid point");
            let tau = resonant_delay_duration(&p).expect("modulated point");
            (p, w0 + rng.gen_range(-1.0..1.0) / tau)
        })
        .collect()
}

fn oracle_equivalence() -> Result<Verdict> {
    let opts = TransientOptions::default();
    let mut worst = 0.0f64;
    let pts = oracle_points(10);
    for (p, w) in &pts {
        let net = build_circulator_network(p, BiasPairing::Quadrature)?;
        let r = simulate(&net, &Drive::from_power(0, *w, 1e-21), &opts)?;
        let s: HarmonicScatteringMatrix = solve(&net, r.probe_frequency, 5)?;
        worst = worst.max(r.deviation_from(&s));
    }
    Ok(Verdict { passed: worst < 0.01, detail: format!("largest relative deviation {} over {} points", e(worst), pts.len()) })
}

fn tuned_at(target_hz: f64, opts: &TuneOptions) -> Result<TuneResult> {
    tune(target_hz, &CircuitParams::default(), &SquidArraySpec::default(), opts)
}

fn circulation() -> Result<Verdict> {
    let r = tuned_at(4.5e9, &TuneOptions::default())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for op in [&r.ccw, &r.cw] {
        let net = build_circulator_network(&op.circuit, BiasPairing::Quadrature)?;
        let ws: Vec<f64> = linspace(4.35e9, 4.65e9, 301).iter().map(|f| TAU * f).collect();
        let s = sweep_all(&net, &ws, 3)?;
        let (inp, out) = op.direction.through();
        let k = (0..ws.len()).max_by(|&a, &b| s[b].carrier(inp, out).norm().partial_cmp(&s[a].carrier(inp, out).norm()).unwrap()).unwrap_or(0);
        let fwd = db20(s[k].carrier(out, inp).norm());
        let iso = -db20(s[k].carrier(inp, out).norm());
        let band = circulation_band(&ws, &s, op.direction, -1.0, 20.0);
        let carrier = s[k].carrier(out, inp).norm_sqr();
        let even = s[k].get(2, out, inp).norm_sqr().max(s[k].get(-2, out, inp).norm_sqr());
        let sup = 10.0 * (carrier / even).log10();
        ok &= fwd > -1.0 && band >= 10e6 && sup > 40.0;
        parts.push(format!(
            "{}: forward {:.3} dB, isolation {:.1} dB, band {:.1} MHz, even sidebands {:.1} dB down",
            op.direction.label(),
            fwd,
            iso,
            band / 1e6,
            sup.min(999.0)
        ));
    }
    Ok(Verdict { passed: ok, detail: parts.join("; ") })
}

fn reconfigurability() -> Result<Verdict> {
    let ws: Vec<f64> = linspace(4.1e9, 4.4e9, 61).iter().map(|f| TAU * f).collect();
    let mut worst = 0.0f64;
    for k in 0..24 {
        let phi = k as f64 * PI / 12.0;
        let a = CircuitParams::lossless(2.5e-9, 0.62, 1e-12, 50.0, MODULATION, phi);
        let b = CircuitParams { phi: -phi, ..a };
        let sa = sweep_all(&build_circulator_network(&a, BiasPairing::Quadrature)?, &ws, 3)?;
        let sb = sweep_all(&build_circulator_network(&b, BiasPairing::Quadrature)?, &ws, 3)?;
        for (x, y) in sa.iter().zip(&sb) {
            worst = worst.max((x.carrier(1, 0).norm() - y.carrier(0, 1).norm()).abs());
            worst = worst.max((x.carrier(0, 1).norm() - y.carrier(1, 0).norm()).abs());
        }
    }
    Ok(Verdict { passed: worst < 1e-6, detail: format!("largest |S| mismatch {} over 24 phases x 61 frequencies", e(worst)) })
}

fn tuneup_behaviour() -> Result<Verdict> {
    let free = tuned_at(4.5e9, &TuneOptions::default())?;
    let floor = tuned_at(4.5e9, &TuneOptions { delay_floor: Some(3e-9), ..TuneOptions::default() })?;
    let d_ccw = free.ccw.phase - FRAC_PI_2;
    let d_cw = free.cw.phase - 3.0 * FRAC_PI_2;
    let shifted = floor.ccw.phase / PI;
    let ok = d_ccw.abs() < 0.05 && d_cw.abs() < 0.05 && !free.delay_limited && floor.delay_limited && (0.6..=0.8).contains(&shifted);
    Ok(Verdict {
        passed: ok,
        detail: format!(
            "free: ccw {:+.4} rad, cw {:+.4} rad from the quarter turns; 3 ns floor: ccw at {:.4} pi",
            d_ccw, d_cw, shifted
        ),
    })
}

/// Transient settings for the compression search: the 1 dB point sits on a
/// smooth curve and a single run per power is accurate enough.
pub fn compression_options() -> TransientOptions {
    TransientOptions { max_denominator: 4, richardson: false, ..TransientOptions::default() }
}

/// The expansion search needs the small-signal isolation to well beyond
/// 20 dB, which takes the extrapolated step.
pub fn expansion_options() -> TransientOptions {
    TransientOptions { max_denominator: 8, richardson: true, ..TransientOptions::default() }
}

fn compression() -> Result<Verdict> {
    let band = 1e-13..=1e-11;
    let mut ok = true;
    let mut parts = Vec::new();
    for target in [4.0e9, 4.5e9, 5.0e9] {
        let r = tuned_at(target, &TuneOptions::default())?;
        let op = &r.ccw;
        let net = build_circulator_network(&op.circuit, BiasPairing::Quadrature)?;
        let w = TAU * op.metrics.operation_frequency;
        let c = find_compression_point(&net, w, Circulation::Ccw, &compression_options(), &PowerSearch::default())?;
        let x = find_expansion_point(&net, w, Circulation::Ccw, &expansion_options(), &PowerSearch::default())?;
        let found = c.bound == PowerBound::Found && x.bound == PowerBound::Found;
        ok &= found && band.contains(&c.power) && band.contains(&x.power);
        parts.push(format!("{:.1} GHz: 1 dB compression {} W, 20 dB expansion {} W", target / 1e9, e(c.power), e(x.power)));
    }
    let n = photons_per_inverse_bandwidth(1e-12, TAU * 4.044e9, 50e6);
    ok &= n > 1e3;
    parts.push(format!("photons per inverse bandwidth at 1 pW {}", e(n)));
    Ok(Verdict { passed: ok, detail: parts.join("; ") })
}

fn sig3(x: f64) -> String {
    format!("{x:.2e}")
}

fn engineering() -> Result<Verdict> {
    let mut ok = true;
    let z_low = bias_filter_impedance(20e-9, 120e6);
    let z_high = bias_filter_impedance(20e-9, 4e9);
    ok &= sig3(z_low) == sig3(15.1) && z_high > 500.0;
    let (xc, xd) = coherence_lengths(&NormalMetalFilm::default())?;
    // Both quoted to the digits given, so compare at one percent.
    ok &= (xc / 5.7e-6 - 1.0).abs() < 0.01 && (xd / 1.06e-6 - 1.0).abs() < 0.01;
    let b = power_budget(&default_bias_chain())?;
    let loads: Vec<f64> = b.stages.iter().map(|s| s.heat_load).collect();
    ok &= loads.len() == 3 && loads.iter().zip([5e-1, 5e-5, 1e-10]).all(|(a, b)| sig3(*a) == sig3(b));
    let w = TAU * 4.044e9;
    let hot = added_noise_photons(3e4, 0.2, 1e-4, 9e-7, 300.0, 50.0, w)?;
    let cold = added_noise_photons(3e4, 0.2, 1e-4, 9e-7, 7.0, 50.0, w)?;
    let ratio = cold.photons / hot.photons;
    ok &= (ratio - 7.0 / 300.0).abs() <= f64::EPSILON * ratio;
    Ok(Verdict {
        passed: ok,
        detail: format!(
            "filter {:.2} ohm and {:.1} ohm; xi_c {:.3} um, xi_d {:.3} um; heat loads {} W; noise ratio {:.15}",
            z_low,
            z_high,
            xc * 1e6,
            xd * 1e6,
            loads.iter().map(|x| sig3(*x)).collect::<Vec<_>>().join(", "),
            ratio
        ),
    })
}
