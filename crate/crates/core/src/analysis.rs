//! Figures of merit and calibration formulas.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::constants::hbar;
use crate::error::{Error, Result};
use crate::floquet::HarmonicScatteringMatrix;
use crate::scalar::Real;

/// Stand-in for an infinite dB value in records and reports.
pub const DB_SENTINEL: f64 = 999.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Circulation {
    /// Port 1 to port 2 transmits, 2 to 1 is isolated.
    Ccw,
    Cw,
}

impl Circulation {
    /// (input, output) port indices of the transmitting path.
    pub fn through(self) -> (usize, usize) {
        match self {
            Circulation::Ccw => (0, 1),
            Circulation::Cw => (1, 0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Circulation::Ccw => "ccw",
            Circulation::Cw => "cw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub direction: Circulation,
    /// Hz
    pub operation_frequency: f64,
    pub insertion_loss: f64,
    pub max_isolation: f64,
    /// Hz
    pub isolation_bandwidth_20db: f64,
    pub sideband_suppression: f64,
    pub dissipation: f64,
    /// W, absent until a transient run fills it in
    pub compression_1db: Option<f64>,
    pub expansion_20db: Option<f64>,
}

pub fn finite_db(x: f64) -> f64 {
    if x.is_nan() {
        DB_SENTINEL
    } else {
        x.clamp(-DB_SENTINEL, DB_SENTINEL)
    }
}

pub fn db20<T: Real>(amplitude: T) -> T {
    T::lit(20.0) * amplitude.log10()
}

/// -10 log10(R^2 + T^2) for amplitude magnitudes R and T.
pub fn dissipation<T: Real>(r: T, t: T) -> T {
    let s = r * r + t * t;
    if s == T::zero() {
        return T::infinity();
    }
    -T::lit(10.0) * s.log10()
}

/// Widest contiguous interval with isolation above threshold, crossings
/// interpolated linearly in dB. Frequencies in Hz, ascending.
pub fn isolation_bandwidth<T: Real>(freqs: &[T], isolation_db: &[T], threshold: T) -> Result<T> {
    if freqs.len() < 2 || freqs.len() != isolation_db.len() {
        return Err(Error::domain("isolation bandwidth needs at least 2 matching samples"));
    }
    let n = freqs.len();
    let cross = |i: usize| {
        // crossing between i and i+1
        let (y0, y1) = (isolation_db[i], isolation_db[i + 1]);
        let t = (threshold - y0) / (y1 - y0);
        freqs[i] + t * (freqs[i + 1] - freqs[i])
    };
    let mut best = T::zero();
    let mut i = 0;
    while i < n {
        if isolation_db[i] > threshold {
            let mut j = i;
            while j + 1 < n && isolation_db[j + 1] > threshold {
                j += 1;
            }
            let lo = if i == 0 { freqs[0] } else { cross(i - 1) };
            let hi = if j == n - 1 { freqs[n - 1] } else { cross(j) };
            if hi - lo > best {
                best = hi - lo;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(best)
}

/// Carrier-to-largest-sideband ratio (dB) at the through port.
pub fn sideband_suppression(s: &HarmonicScatteringMatrix, out: usize, inp: usize) -> Result<f64> {
    if s.truncation < 2 {
        return Err(Error::domain("sideband suppression needs at least two sidebands each side"));
    }
    let carrier = s.get(0, out, inp).norm_sqr();
    let mut worst = 0.0f64;
    for m in s.sidebands() {
        if m != 0 {
            worst = worst.max(s.get(m, out, inp).norm_sqr());
        }
    }
    if carrier == 0.0 {
        return Ok(-DB_SENTINEL);
    }
    if worst == 0.0 {
        return Ok(DB_SENTINEL);
    }
    Ok(finite_db(10.0 * (carrier / worst).log10()))
}

/// Reflection of a balanced bridge pair seen from one port,
/// (i w l + 2 Z0) / (i w l - 4 Z0).
pub fn gamma_balanced<T: Real>(omega: T, l: T, z0: T) -> Complex<T> {
    let x = Complex::new(T::zero(), omega * l);
    (x + Complex::new(T::lit(2.0) * z0, T::zero())) / (x - Complex::new(T::lit(4.0) * z0, T::zero()))
}

pub fn reflection_calibration<T: Real>(r_op: Complex<T>, r_bal: Complex<T>, omega: T, l: T, z0: T) -> Result<Complex<T>> {
    if r_bal.norm_sqr() == T::zero() {
        return Err(Error::domain("calibration undefined: balanced reference is zero"));
    }
    Ok(gamma_balanced(omega, l, z0) * r_op / r_bal)
}

/// Inverse of the calibration: the raw operating trace that calibrates to gamma_op.
pub fn reflection_uncalibration<T: Real>(gamma_op: Complex<T>, r_bal: Complex<T>, omega: T, l: T, z0: T) -> Complex<T> {
    gamma_op * r_bal / gamma_balanced(omega, l, z0)
}

/// P / (hbar w BW)
pub fn photons_per_inverse_bandwidth<T: Real>(power: T, omega: T, bandwidth: T) -> T {
    power / (hbar::<T>() * omega * bandwidth)
}

/// Multiply each sample by e^{i w tau_d}.
pub fn deembed<T: Real>(omegas: &[T], samples: &[Complex<T>], tau_d: T) -> Vec<Complex<T>> {
    samples.iter().zip(omegas).map(|(s, &w)| *s * Complex::from_polar(T::one(), w * tau_d)).collect()
}

pub struct MetricOptions {
    pub threshold_db: f64,
    /// Count sideband power as transmitted when computing dissipation.
    pub strict_dissipation: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { threshold_db: 20.0, strict_dissipation: false }
    }
}

/// Metrics for one direction from a carrier-band sweep. Operation frequency
/// is the point of maximum isolation.
pub fn metrics_from_sweep(
    omegas: &[f64],
    sweep: &[HarmonicScatteringMatrix],
    direction: Circulation,
    opts: &MetricOptions,
) -> Result<MetricsRecord> {
    if sweep.is_empty() || sweep.len() != omegas.len() {
        return Err(Error::domain("empty sweep"));
    }
    let (inp, out) = direction.through();
    let freqs: Vec<f64> = omegas.iter().map(|w| w / std::f64::consts::TAU).collect();
    let iso: Vec<f64> = sweep.iter().map(|s| finite_db(-db20(s.carrier(inp, out).norm()))).collect();
    let mut k = 0;
    for i in 1..iso.len() {
        if iso[i] > iso[k] {
            k = i;
        }
    }
    let s = &sweep[k];
    let t = s.carrier(out, inp).norm();
    let r = s.carrier(inp, inp).norm();
    let diss = if opts.strict_dissipation {
        let mut tot = 0.0;
        for m in s.sidebands() {
            for o in 0..s.n_ports {
                tot += s.get(m, o, inp).norm_sqr();
            }
        }
        finite_db(-10.0 * tot.log10())
    } else {
        // power arriving at every port at the carrier, sidebands excluded
        let mut tt = 0.0;
        for o in 0..s.n_ports {
            if o != inp {
                tt += s.carrier(o, inp).norm_sqr();
            }
        }
        finite_db(dissipation(r, tt.sqrt()))
    };
    let bw = if sweep.len() >= 2 { isolation_bandwidth(&freqs, &iso, opts.threshold_db)? } else { 0.0 };
    let sb = if s.truncation >= 2 { sideband_suppression(s, out, inp)? } else { DB_SENTINEL };
    Ok(MetricsRecord {
        direction,
        operation_frequency: freqs[k],
        insertion_loss: finite_db(-db20(t)),
        max_isolation: iso[k],
        isolation_bandwidth_20db: bw,
        sideband_suppression: sb,
        dissipation: diss,
        compression_1db: None,
        expansion_20db: None,
    })
}

/// Widest contiguous band (Hz) where forward transmission exceeds
/// `min_forward_db` and reverse isolation exceeds `min_isolation_db`.
pub fn circulation_band(
    omegas: &[f64],
    sweep: &[HarmonicScatteringMatrix],
    direction: Circulation,
    min_forward_db: f64,
    min_isolation_db: f64,
) -> f64 {
    let (inp, out) = direction.through();
    let ok: Vec<bool> = sweep
        .iter()
        .map(|s| db20(s.carrier(out, inp).norm()) > min_forward_db && -db20(s.carrier(inp, out).norm()) > min_isolation_db)
        .collect();
    let mut best = 0.0f64;
    let mut start: Option<usize> = None;
    for i in 0..=ok.len() {
        let on = i < ok.len() && ok[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s0)) => {
                best = best.max((omegas[i - 1] - omegas[s0]) / std::f64::consts::TAU);
                start = None;
            }
            _ => {}
        }
    }
    best
}
