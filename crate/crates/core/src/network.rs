//! Netlists for the four-bridge circulator and its static counterparts.

use serde::{Deserialize, Serialize};

use crate::device::resonant_frequency;
use crate::error::{Error, Result};
use crate::CircuitParams;

pub const GROUND: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Branch {
    /// 1/l(t) = (1 + sign * delta * cos(omega t + phase)) / l0
    ModulatedInductor { a: usize, b: usize, l0: f64, delta: f64, omega: f64, phase: f64, sign: f64 },
    Inductor { a: usize, b: usize, l: f64 },
    Capacitor { a: usize, b: usize, c: f64 },
    Resistor { a: usize, b: usize, r: f64 },
}

impl Branch {
    pub fn endpoints(&self) -> (usize, usize) {
        match *self {
            Branch::ModulatedInductor { a, b, .. }
            | Branch::Inductor { a, b, .. }
            | Branch::Capacitor { a, b, .. }
            | Branch::Resistor { a, b, .. } => (a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Port {
    pub node: usize,
    pub reference: usize,
    pub z0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkDescription {
    pub node_names: Vec<String>,
    pub branches: Vec<Branch>,
    pub ports: Vec<Port>,
}

impl NetworkDescription {
    pub fn n_nodes(&self) -> usize {
        self.node_names.len()
    }

    /// Common modulation frequency of all modulated inductors, 0 if none.
    pub fn modulation(&self) -> Result<f64> {
        let mut om: Option<f64> = None;
        for b in &self.branches {
            if let Branch::ModulatedInductor { omega, delta, .. } = *b {
                if delta == 0.0 {
                    continue;
                }
                match om {
                    None => om = Some(omega),
                    Some(o) if o != omega => return Err(Error::domain("modulated inductors must share one frequency")),
                    _ => {}
                }
            }
        }
        Ok(om.unwrap_or(0.0))
    }

    pub fn is_modulated(&self) -> bool {
        self.branches
            .iter()
            .any(|b| matches!(b, Branch::ModulatedInductor { delta, omega, .. } if *delta != 0.0 && *omega != 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        let ok = |x: usize| x == GROUND || x < n;
        for b in &self.branches {
            let (a, c) = b.endpoints();
            if !ok(a) || !ok(c) || a == c {
                return Err(Error::domain("branch endpoint does not exist"));
            }
        }
        for p in &self.ports {
            if !ok(p.node) || !ok(p.reference) || p.node == p.reference {
                return Err(Error::domain("port node does not exist"));
            }
            if !(p.z0 > 0.0) {
                return Err(Error::domain("port impedance must be positive"));
            }
        }
        // union-find with ground as node n
        let mut parent: Vec<usize> = (0..=n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        let idx = |x: usize| if x == GROUND { n } else { x };
        let join = |a: usize, b: usize, parent: &mut Vec<usize>| {
            let (ra, rb) = (find(parent, idx(a)), find(parent, idx(b)));
            parent[ra] = rb;
        };
        for b in &self.branches {
            let (a, c) = b.endpoints();
            join(a, c, &mut parent);
        }
        for p in &self.ports {
            join(p.node, p.reference, &mut parent);
        }
        let root = find(&mut parent, n);
        for i in 0..n {
            if find(&mut parent, i) != root {
                return Err(Error::domain(format!("node {} is disconnected", self.node_names[i])));
            }
        }
        Ok(())
    }

    pub fn count<F: Fn(&Branch) -> bool>(&self, f: F) -> usize {
        self.branches.iter().filter(|b| f(b)).count()
    }
}

/// Which bias drive each bridge sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BiasPairing {
    /// Input bridges at (0, pi/2), output bridges at (-phi, pi/2 - phi).
    #[default]
    Quadrature,
    /// Input bridges at 0, output bridges at phi.
    SharedLine,
    /// Bridges of the first resonator at 0, second resonator at phi.
    PerResonator,
}

pub const P1: usize = 0;
pub const P2: usize = 1;
pub const P3: usize = 2;
pub const P4: usize = 3;
const X1: usize = 4;
const Y1: usize = 5;
const X2: usize = 6;
const Y2: usize = 7;

/// Bridges as (a, b | c, d): ports a, b on one diagonal, resonator nodes c,
/// d on the other. Order: input side of resonator 1, output side of
/// resonator 1, then the same for resonator 2.
const BRIDGES: [(usize, usize, usize, usize); 4] = [(P1, P3, X1, Y1), (P2, P4, X1, Y1), (P1, P3, X2, Y2), (P2, P4, X2, Y2)];

pub fn bridge_phases(pairing: BiasPairing, phi: f64) -> [f64; 4] {
    use std::f64::consts::FRAC_PI_2;
    match pairing {
        BiasPairing::Quadrature => [0.0, -phi, FRAC_PI_2, FRAC_PI_2 - phi],
        BiasPairing::SharedLine => [0.0, phi, 0.0, phi],
        BiasPairing::PerResonator => [0.0, 0.0, phi, phi],
    }
}

struct Builder {
    names: Vec<String>,
    branches: Vec<Branch>,
}

impl Builder {
    fn base() -> Self {
        let names = ["P1", "P2", "P3", "P4", "X1", "Y1", "X2", "Y2"].iter().map(|s| s.to_string()).collect();
        Self { names, branches: Vec::new() }
    }

    fn node(&mut self, name: String) -> usize {
        self.names.push(name);
        self.names.len() - 1
    }

    /// Series chain a - [lg] - [r] - element - b; returns the element's start node.
    fn series_chain(&mut self, a: usize, lg: f64, r: f64, tag: &str) -> usize {
        let mut at = a;
        if lg > 0.0 {
            let n = self.node(format!("{tag}.g"));
            self.branches.push(Branch::Inductor { a: at, b: n, l: lg });
            at = n;
        }
        if r > 0.0 {
            let n = self.node(format!("{tag}.r"));
            self.branches.push(Branch::Resistor { a: at, b: n, r });
            at = n;
        }
        at
    }

    fn finish(mut self, p: &CircuitParams) -> Result<NetworkDescription> {
        let q_g = if p.q_int.is_finite() {
            let w0 = resonant_frequency(p)?;
            Some(p.q_int / (w0 * p.c))
        } else {
            None
        };
        for (x, y) in [(X1, Y1), (X2, Y2)] {
            self.branches.push(Branch::Capacitor { a: x, b: y, c: p.c });
            if let Some(r) = q_g {
                self.branches.push(Branch::Resistor { a: x, b: y, r });
            }
        }
        let ports = [P1, P2, P3, P4].iter().map(|&n| Port { node: n, reference: GROUND, z0: p.z0 }).collect();
        let net = NetworkDescription { node_names: self.names, branches: self.branches, ports };
        net.validate()?;
        Ok(net)
    }
}

/// Ring a-c(+) c-b(-) b-d(+) d-a(-): opposite arms share the sign of their
/// imbalance.
fn ring(a: usize, b: usize, c: usize, d: usize) -> [(usize, usize, f64); 4] {
    [(a, c, 1.0), (c, b, -1.0), (b, d, 1.0), (d, a, -1.0)]
}

/// The modulated circulator: 16 arrays in four bridges, two capacitors,
/// four ports to ground.
pub fn build_circulator_network(p: &CircuitParams, pairing: BiasPairing) -> Result<NetworkDescription> {
    p.validate()?;
    let phases = bridge_phases(pairing, p.phi);
    let mut bld = Builder::base();
    for (k, &(a, b, c, d)) in BRIDGES.iter().enumerate() {
        for (j, (n1, n2, sign)) in ring(a, b, c, d).into_iter().enumerate() {
            let start = bld.series_chain(n1, p.lg, p.r_au, &format!("B{}.{}", k + 1, j + 1));
            bld.branches.push(Branch::ModulatedInductor {
                a: start,
                b: n2,
                l0: p.l0,
                delta: p.delta0,
                omega: p.omega,
                phase: phases[k],
                sign,
            });
        }
    }
    bld.finish(p)
}

/// Same circuit with each bridge frozen at a static per-array imbalance.
pub fn build_static_network(p: &CircuitParams, deltas: [f64; 4]) -> Result<NetworkDescription> {
    p.validate()?;
    let mut bld = Builder::base();
    for (k, &(a, b, c, d)) in BRIDGES.iter().enumerate() {
        if !(deltas[k].abs() < 1.0) {
            return Err(Error::domain("bridge imbalance out of range"));
        }
        for (j, (n1, n2, sign)) in ring(a, b, c, d).into_iter().enumerate() {
            let start = bld.series_chain(n1, p.lg, p.r_au, &format!("B{}.{}", k + 1, j + 1));
            bld.branches.push(Branch::Inductor { a: start, b: n2, l: p.l0 / (1.0 + sign * deltas[k]) });
        }
    }
    bld.finish(p)
}

/// Static network whose port coupling equals what a drive of amplitude
/// delta0 gives each converted sideband: every bridge imbalanced by
/// delta0 / 2, signed so both resonators couple the port pairs the same way.
pub fn rotating_frame_equivalent(p: &CircuitParams) -> Result<NetworkDescription> {
    let h = p.delta0 / 2.0;
    build_static_network(p, [h, h, -h, -h])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CircuitParams {
        CircuitParams { delta0: 0.3, ..CircuitParams::default() }
    }

    #[test]
    fn element_counts() {
        let net = build_circulator_network(&params(), BiasPairing::Quadrature).unwrap();
        assert_eq!(net.count(|b| matches!(b, Branch::ModulatedInductor { .. })), 16);
        assert_eq!(net.count(|b| matches!(b, Branch::Capacitor { .. })), 2);
        assert_eq!(net.ports.len(), 4);
        assert_eq!(net.n_nodes(), 8);
        assert!(net.is_modulated());
    }

    #[test]
    fn zero_imbalance_is_unmodulated() {
        let p = CircuitParams { delta0: 0.0, ..params() };
        let net = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        assert!(!net.is_modulated());
    }

    #[test]
    fn opposite_arms_share_sign() {
        let net = build_circulator_network(&params(), BiasPairing::SharedLine).unwrap();
        let signs: Vec<f64> = net
            .branches
            .iter()
            .filter_map(|b| match b {
                Branch::ModulatedInductor { sign, .. } => Some(*sign),
                _ => None,
            })
            .collect();
        for k in 0..4 {
            assert_eq!(signs[4 * k], signs[4 * k + 2]);
            assert_eq!(signs[4 * k + 1], signs[4 * k + 3]);
            assert_eq!(signs[4 * k], -signs[4 * k + 1]);
        }
    }

    #[test]
    fn pairings() {
        let phi = 1.0;
        assert_eq!(bridge_phases(BiasPairing::SharedLine, phi), [0.0, phi, 0.0, phi]);
        assert_eq!(bridge_phases(BiasPairing::PerResonator, phi), [0.0, 0.0, phi, phi]);
        let q = bridge_phases(BiasPairing::Quadrature, phi);
        assert!((q[2] - q[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((q[3] - q[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn series_and_loss_elements() {
        let p = CircuitParams { lg: 0.1e-9, r_au: 0.01, q_int: 400.0, ..params() };
        let net = build_circulator_network(&p, BiasPairing::Quadrature).unwrap();
        assert_eq!(net.count(|b| matches!(b, Branch::Inductor { .. })), 16);
        // 16 series resistors plus one loss resistor per capacitor
        assert_eq!(net.count(|b| matches!(b, Branch::Resistor { .. })), 18);
        assert_eq!(net.n_nodes(), 8 + 32);
    }

    #[test]
    fn validation_catches_bad_netlists() {
        let mut net = build_circulator_network(&params(), BiasPairing::Quadrature).unwrap();
        net.node_names.push("floating".into());
        assert!(net.validate().is_err());
        let mut net = build_circulator_network(&params(), BiasPairing::Quadrature).unwrap();
        net.ports[0].node = 99;
        assert!(net.validate().is_err());
    }
}
