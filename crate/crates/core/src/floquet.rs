//! Harmonic-balance scattering of a linear periodically modulated network.
//!
//! Unknowns are node-flux phasors psi_{n,m} at omega_p + m Omega in the
//! physics convention x(t) = Re(X e^{-i w t}), so a node voltage is
//! -i w psi. Modulated inductors have three Fourier coefficients of 1/l and
//! couple only neighbouring sideband blocks.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Branch, NetworkDescription, GROUND};
use crate::Complex;

pub const DEFAULT_HARMONICS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicScatteringMatrix {
    pub probe_frequency: f64,
    pub modulation: f64,
    pub truncation: usize,
    pub n_ports: usize,
    entries: Vec<Complex>,
}

impl HarmonicScatteringMatrix {
    fn index(&self, m: i32, out: usize, inp: usize) -> usize {
        let mm = (m + self.truncation as i32) as usize;
        (mm * self.n_ports + out) * self.n_ports + inp
    }

    /// Outgoing wave at port `out` and sideband m per unit wave into `inp`.
    pub fn get(&self, m: i32, out: usize, inp: usize) -> Complex {
        if m.unsigned_abs() as usize > self.truncation {
            return Complex::new(0.0, 0.0);
        }
        self.entries[self.index(m, out, inp)]
    }

    pub fn carrier(&self, out: usize, inp: usize) -> Complex {
        self.get(0, out, inp)
    }

    pub fn sidebands(&self) -> std::ops::RangeInclusive<i32> {
        -(self.truncation as i32)..=(self.truncation as i32)
    }

    /// Total scattered power per unit incident power at `inp`.
    pub fn scattered_power(&self, inp: usize) -> f64 {
        let mut s = 0.0;
        for m in self.sidebands() {
            for out in 0..self.n_ports {
                s += self.get(m, out, inp).norm_sqr();
            }
        }
        s
    }

    /// Transmission between the differential modes of port pairs (0, 2) and (1, 3).
    pub fn differential(&self, m: i32, forward: bool) -> Complex {
        let s = |o: usize, i: usize| self.get(m, o, i);
        if forward {
            (s(1, 0) - s(3, 0) - s(1, 2) + s(3, 2)) * 0.5
        } else {
            (s(0, 1) - s(2, 1) - s(0, 3) + s(2, 3)) * 0.5
        }
    }

    /// Transmission between the common modes of the same port pairs.
    pub fn common(&self, m: i32, forward: bool) -> Complex {
        let s = |o: usize, i: usize| self.get(m, o, i);
        if forward {
            (s(1, 0) + s(3, 0) + s(1, 2) + s(3, 2)) * 0.5
        } else {
            (s(0, 1) + s(2, 1) + s(0, 3) + s(2, 3)) * 0.5
        }
    }
}

fn stamp(a_mat: &mut DMatrix<Complex>, a: usize, b: usize, row: usize, col: usize, k: usize, y: Complex) {
    // k: number of sideband blocks; node n, block j lives at n * k + j
    let ia = |n: usize, j: usize| n * k + j;
    if a != GROUND {
        a_mat[(ia(a, row), ia(a, col))] += y;
        if b != GROUND {
            a_mat[(ia(a, row), ia(b, col))] -= y;
        }
    }
    if b != GROUND {
        a_mat[(ia(b, row), ia(b, col))] += y;
        if a != GROUND {
            a_mat[(ia(b, row), ia(a, col))] -= y;
        }
    }
}

/// Assemble the harmonic-balance matrix (flux unknowns, current balance rows).
pub fn assemble(net: &NetworkDescription, omega_p: f64, truncation: usize) -> Result<DMatrix<Complex>> {
    let om = net.modulation()?;
    let k = 2 * truncation + 1;
    let n = net.n_nodes();
    let mut a = DMatrix::<Complex>::zeros(n * k, n * k);
    let mi = truncation as i32;
    let w = |j: usize| omega_p + (j as i32 - mi) as f64 * om;
    let c1 = |x: f64| Complex::new(x, 0.0);
    for br in &net.branches {
        match *br {
            Branch::Inductor { a: p, b: q, l } => {
                for j in 0..k {
                    stamp(&mut a, p, q, j, j, k, c1(1.0 / l));
                }
            }
            Branch::ModulatedInductor { a: p, b: q, l0, delta, phase, sign, .. } => {
                let g1 = sign * delta / (2.0 * l0);
                for j in 0..k {
                    stamp(&mut a, p, q, j, j, k, c1(1.0 / l0));
                    if g1 != 0.0 {
                        if j >= 1 {
                            stamp(&mut a, p, q, j, j - 1, k, Complex::from_polar(g1, -phase));
                        }
                        if j + 1 < k {
                            stamp(&mut a, p, q, j, j + 1, k, Complex::from_polar(g1, phase));
                        }
                    }
                }
            }
            Branch::Capacitor { a: p, b: q, c } => {
                for j in 0..k {
                    stamp(&mut a, p, q, j, j, k, c1(-w(j) * w(j) * c));
                }
            }
            Branch::Resistor { a: p, b: q, r } => {
                for j in 0..k {
                    stamp(&mut a, p, q, j, j, k, Complex::new(0.0, -w(j) / r));
                }
            }
        }
    }
    for port in &net.ports {
        for j in 0..k {
            stamp(&mut a, port.node, port.reference, j, j, k, Complex::new(0.0, -w(j) / port.z0));
        }
    }
    Ok(a)
}

/// Harmonic scattering matrix at probe frequency omega_p with sidebands |m| <= M.
pub fn solve(net: &NetworkDescription, omega_p: f64, truncation: usize) -> Result<HarmonicScatteringMatrix> {
    net.validate()?;
    let om = net.modulation()?;
    if net.is_modulated() && truncation < 1 {
        return Err(Error::domain("at least one sideband is needed when the network is modulated"));
    }
    let mi = truncation as i32;
    for m in -mi..=mi {
        if !(omega_p + m as f64 * om > 0.0) {
            return Err(Error::domain("sideband at or below zero frequency within truncation"));
        }
    }
    let k = 2 * truncation + 1;
    let np = net.ports.len();
    let a = assemble(net, omega_p, truncation)?;
    let dim = a.nrows();
    let mut rhs = DMatrix::<Complex>::zeros(dim, np);
    for (nu, port) in net.ports.iter().enumerate() {
        let inj = Complex::new(2.0 / port.z0.sqrt(), 0.0);
        if port.node != GROUND {
            rhs[(port.node * k + truncation, nu)] += inj;
        }
        if port.reference != GROUND {
            rhs[(port.reference * k + truncation, nu)] -= inj;
        }
    }
    let lu = a.lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::solver("network resonance exactly at solve frequency with zero damping"))?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::solver("network resonance exactly at solve frequency with zero damping"));
    }
    let mut entries = vec![Complex::new(0.0, 0.0); k * np * np];
    let flux = |node: usize, j: usize, col: usize| if node == GROUND { Complex::new(0.0, 0.0) } else { x[(node * k + j, col)] };
    for j in 0..k {
        let wm = omega_p + (j as i32 - mi) as f64 * om;
        for (mu, port) in net.ports.iter().enumerate() {
            for nu in 0..np {
                let psi = flux(port.node, j, nu) - flux(port.reference, j, nu);
                let v = Complex::new(0.0, -wm) * psi;
                let mut b = v / port.z0.sqrt();
                if mu == nu && j == truncation {
                    b -= Complex::new(1.0, 0.0);
                }
                entries[(j * np + mu) * np + nu] = b;
            }
        }
    }
    Ok(HarmonicScatteringMatrix { probe_frequency: omega_p, modulation: om, truncation, n_ports: np, entries })
}

/// One solve per grid point, in grid order; failures stay in place.
pub fn sweep(net: &NetworkDescription, omegas: &[f64], truncation: usize) -> Vec<Result<HarmonicScatteringMatrix>> {
    omegas.par_iter().map(|&w| solve(net, w, truncation)).collect()
}

/// Sweep that fails on the first bad point.
pub fn sweep_all(net: &NetworkDescription, omegas: &[f64], truncation: usize) -> Result<Vec<HarmonicScatteringMatrix>> {
    sweep(net, omegas, truncation).into_iter().collect()
}

/// tau(w) = d arg(S e^{i w tau_d}) / dw on a uniform grid; central
/// differences inside, one-sided at the ends.
pub fn group_delay(omegas: &[f64], samples: &[Complex], de_embed_delay: f64) -> Result<Vec<f64>> {
    let n = omegas.len();
    if n < 3 || samples.len() != n {
        return Err(Error::domain("group delay needs at least 3 matching samples"));
    }
    let h = omegas[1] - omegas[0];
    if !(h > 0.0) {
        return Err(Error::domain("frequency grid must be increasing"));
    }
    for i in 1..n {
        let d = omegas[i] - omegas[i - 1];
        if (d - h).abs() > 1e-6 * h.abs() {
            return Err(Error::domain("frequency grid must be uniform"));
        }
    }
    if h * de_embed_delay.abs() > std::f64::consts::PI {
        return Err(Error::domain("undersampled phase"));
    }
    let phase = unwrap_phase(
        &samples
            .iter()
            .zip(omegas)
            .map(|(s, &w)| (s * Complex::from_polar(1.0, w * de_embed_delay)).arg())
            .collect::<Vec<_>>(),
    );
    let mut out = vec![0.0; n];
    out[0] = (phase[1] - phase[0]) / h;
    out[n - 1] = (phase[n - 1] - phase[n - 2]) / h;
    for i in 1..n - 1 {
        out[i] = (phase[i + 1] - phase[i - 1]) / (2.0 * h);
    }
    Ok(out)
}

pub fn unwrap_phase(p: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(p.len());
    let mut offset = 0.0;
    for (i, &x) in p.iter().enumerate() {
        if i > 0 {
            let d = x - p[i - 1];
            if d > PI {
                offset -= TAU;
            } else if d < -PI {
                offset += TAU;
            }
        }
        out.push(x + offset);
    }
    out
}

/// Uniform grid of n points from a to b inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Peak of a sampled curve refined by a parabola through its neighbours.
pub fn refined_peak(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mut i = 0;
    for j in 1..ys.len() {
        if ys[j] > ys[i] {
            i = j;
        }
    }
    if i == 0 || i + 1 == ys.len() {
        return (xs[i], ys[i]);
    }
    let (y0, y1, y2) = (ys[i - 1], ys[i], ys[i + 1]);
    let den = y0 - 2.0 * y1 + y2;
    if den >= 0.0 {
        return (xs[i], ys[i]);
    }
    let t = 0.5 * (y0 - y2) / den;
    let h = xs[i + 1] - xs[i];
    (xs[i] + t * h, y1 - 0.25 * (y0 - y2) * t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::gamma_balanced;
    use crate::network::{build_circulator_network, build_static_network, BiasPairing};
    use crate::CircuitParams;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn tuned() -> CircuitParams {
        CircuitParams { l0: 2.5e-9, delta0: 0.65, phi: FRAC_PI_2, ..CircuitParams::default() }
    }

    // Independent oracle: a plain static nodal solve (no harmonic blocks)
    // in the engineering convention, conjugated back.
    fn static_oracle(net: &NetworkDescription, w: f64) -> Vec<Vec<Complex>> {
        let n = net.n_nodes();
        let mut y = DMatrix::<Complex>::zeros(n, n);
        let mut add = |a: usize, b: usize, v: Complex| {
            if a != GROUND {
                y[(a, a)] += v;
            }
            if b != GROUND {
                y[(b, b)] += v;
            }
            if a != GROUND && b != GROUND {
                y[(a, b)] -= v;
                y[(b, a)] -= v;
            }
        };
        let j = Complex::new(0.0, 1.0);
        for br in &net.branches {
            match *br {
                Branch::Inductor { a, b, l } => add(a, b, 1.0 / (j * w * l)),
                Branch::ModulatedInductor { a, b, l0, .. } => add(a, b, 1.0 / (j * w * l0)),
                Branch::Capacitor { a, b, c } => add(a, b, j * w * c),
                Branch::Resistor { a, b, r } => add(a, b, Complex::new(1.0 / r, 0.0)),
            }
        }
        for p in &net.ports {
            add(p.node, p.reference, Complex::new(1.0 / p.z0, 0.0));
        }
        let inv = y.try_inverse().unwrap();
        let np = net.ports.len();
        let mut s = vec![vec![Complex::new(0.0, 0.0); np]; np];
        for mu in 0..np {
            for nu in 0..np {
                let z = inv[(net.ports[mu].node, net.ports[nu].node)];
                let v = z * 2.0 / net.ports[nu].z0.sqrt();
                let b = v / net.ports[mu].z0.sqrt() - if mu == nu { 1.0 } else { 0.0 };
                s[mu][nu] = b.conj();
            }
        }
        s
    }

    #[test]
    fn balanced_reflection_matches_closed_form() {
        let p = CircuitParams { delta0: 0.0, ..CircuitParams::default() };
        let net = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        for f in [1e9, 3.3e9, 5e9, 9.1e9] {
            let w = TAU * f;
            let s = solve(&net, w, 1).unwrap();
            let g = gamma_balanced(w, p.l0, p.z0);
            for nu in 0..4 {
                assert!((s.carrier(nu, nu) - g).norm() < 1e-12 * g.norm(), "{f}");
            }
            for m in [-1, 1] {
                for o in 0..4 {
                    assert_eq!(s.get(m, o, 0), Complex::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn unmodulated_result_independent_of_truncation() {
        let p = CircuitParams { delta0: 0.0, ..CircuitParams::default() };
        let net = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        let w = TAU * 6.5e9;
        let a = solve(&net, w, 1).unwrap();
        let b = solve(&net, w, 5).unwrap();
        for o in 0..4 {
            for i in 0..4 {
                assert!((a.carrier(o, i) - b.carrier(o, i)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn static_network_matches_plain_nodal_oracle() {
        let p = CircuitParams { delta0: 0.0, q_int: 300.0, lg: 0.05e-9, r_au: 0.02, ..CircuitParams::default() };
        let net = build_static_network(&p, [0.1, -0.2, 0.15, 0.05]).unwrap();
        for f in [5.5e9, 6.9e9, 7.3e9] {
            let w = TAU * f;
            let s = solve(&net, w, 0).unwrap();
            let o = static_oracle(&net, w);
            for mu in 0..4 {
                for nu in 0..4 {
                    assert!((s.carrier(mu, nu) - o[mu][nu]).norm() < 1e-9, "{f} {mu} {nu} {} {}", s.carrier(mu, nu), o[mu][nu]);
                }
            }
        }
    }

    #[test]
    fn reciprocal_without_modulation() {
        let p = CircuitParams { delta0: 0.0, ..tuned() };
        let net = build_static_network(&p, [0.3, 0.2, -0.1, 0.25]).unwrap();
        let s = solve(&net, TAU * 4.3e9, 3).unwrap();
        for o in 0..4 {
            for i in 0..4 {
                assert!((s.carrier(o, i) - s.carrier(i, o)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn phase_reversal_swaps_directions() {
        let p = tuned();
        let q = CircuitParams { phi: -p.phi, ..p };
        let a = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        let b = build_circulator_network(&q, BiasPairing::Quadrature).unwrap();
        for f in [4.1e9, 4.24e9, 4.4e9] {
            let sa = solve(&a, TAU * f, 3).unwrap();
            let sb = solve(&b, TAU * f, 3).unwrap();
            assert!((sa.carrier(1, 0).norm() - sb.carrier(0, 1).norm()).abs() < 1e-10);
            assert!((sa.carrier(0, 1).norm() - sb.carrier(1, 0).norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn tuned_point_circulates_with_unit_power() {
        let p = tuned();
        let net = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        let s = solve(&net, TAU * 4.24e9, 5).unwrap();
        let s21 = 20.0 * s.carrier(1, 0).norm().log10();
        let s12 = 20.0 * s.carrier(0, 1).norm().log10();
        assert!(s21 > -1.0, "{s21}");
        assert!(s12 < -20.0, "{s12}");
        for nu in 0..4 {
            assert!((s.scattered_power(nu) - 1.0).abs() < 1e-3);
        }
        // sidebands cancel between the two resonators
        for m in [-2, -1, 1, 2] {
            assert!(s.get(m, 1, 0).norm() < 1e-5);
        }
    }

    #[test]
    fn perturbed_inductor_breaks_sideband_cancellation() {
        let p = tuned();
        let mut net = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        let s0 = solve(&net, TAU * 4.24e9, 3).unwrap();
        if let Branch::ModulatedInductor { l0, .. } = &mut net.branches[0] {
            *l0 *= 1.01;
        }
        let s1 = solve(&net, TAU * 4.24e9, 3).unwrap();
        let sb = |s: &HarmonicScatteringMatrix| s.get(2, 1, 0).norm().max(s.get(-2, 1, 0).norm());
        assert!(sb(&s0) < 1e-5);
        assert!(sb(&s1) > 1e-5);
    }

    #[test]
    fn truncation_converges() {
        let p = CircuitParams { delta0: 0.3, l0: 1e-9, ..tuned() };
        let net = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        for f in [6.8e9, 7.0e9] {
            let a = solve(&net, TAU * f, 3).unwrap();
            let b = solve(&net, TAU * f, 5).unwrap();
            for o in 0..4 {
                for i in 0..4 {
                    assert!((a.carrier(o, i).norm() - b.carrier(o, i).norm()).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn preconditions() {
        let net = build_circulator_network(&tuned(), BiasPairing::Quadrature).unwrap();
        assert!(solve(&net, TAU * 4e9, 0).is_err());
        assert!(solve(&net, TAU * 0.3e9, 5).is_err());
    }

    #[test]
    fn lossless_static_sweep_conserves_power() {
        let p = CircuitParams::default();
        let net = build_static_network(&p, [0.1, 0.1, -0.1, -0.1]).unwrap();
        let ws = linspace(TAU * 6.5e9, TAU * 7.5e9, 11);
        for s in sweep_all(&net, &ws, 0).unwrap() {
            for nu in 0..4 {
                assert!((s.scattered_power(nu) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn group_delay_of_pure_delay() {
        let tau = 3e-9;
        let ws = linspace(TAU * 4e9, TAU * 4.1e9, 101);
        let s: Vec<Complex> = ws.iter().map(|&w| Complex::from_polar(0.7, w * tau)).collect();
        for g in group_delay(&ws, &s, 0.0).unwrap() {
            assert!((g - tau).abs() < 1e-15);
        }
        // engineering-convention cable removed by matching de-embed
        let s: Vec<Complex> = ws.iter().map(|&w| Complex::from_polar(1.0, -w * tau)).collect();
        for g in group_delay(&ws, &s, tau).unwrap() {
            assert!(g.abs() < 1e-15);
        }
        assert!(group_delay(&ws, &s, 1e-6).is_err());
        assert!(group_delay(&ws[..2], &s[..2], 0.0).is_err());
    }

    #[test]
    fn static_delay_peaks_at_several_nanoseconds() {
        let p = CircuitParams { delta0: 0.2, ..CircuitParams::default() };
        let net = build_static_network(&p, [0.2, 0.2, -0.2, -0.2]).unwrap();
        let ws = linspace(TAU * 6.8e9, TAU * 7.2e9, 801);
        let s: Vec<Complex> = sweep_all(&net, &ws, 0).unwrap().iter().map(|s| s.carrier(2, 0)).collect();
        let tau = group_delay(&ws, &s, 0.0).unwrap();
        let peak = tau.iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak > 2e-9 && peak < 20e-9, "{peak}");
    }

    #[test]
    fn refined_peak_of_parabola() {
        let xs = linspace(0.0, 1.0, 11);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - (x - 0.437f64).powi(2)).collect();
        let (x, y) = refined_peak(&xs, &ys);
        assert!((x - 0.437).abs() < 1e-12 && (y - 3.0).abs() < 1e-12);
        let _ = PI;
    }
}
