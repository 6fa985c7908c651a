//! Bessel functions of the first kind by power series.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Series is only trusted inside this radius; the flux mapping never needs more.
pub const SERIES_GUARD: f64 = 2.0;

/// J_n(x) for small integer order, |x| < 2.
pub fn bessel_j<T: Real>(n: u32, x: T) -> Result<T> {
    if !(x.abs() < T::lit(SERIES_GUARD)) {
        return Err(Error::domain(format!(
            "bessel argument {} outside series guard |x| < {SERIES_GUARD}",
            x
        )));
    }
    let half = x / T::lit(2.0);
    let q = -(half * half);
    // leading term (x/2)^n / n!
    let mut term = T::one();
    for k in 1..=n {
        term = term * half / T::lit(k as f64);
    }
    let mut sum = term;
    for k in 1..60u32 {
        term = term * q / (T::lit(k as f64) * T::lit((k + n) as f64));
        sum = sum + term;
        if term.abs() <= T::epsilon() * sum.abs() {
            break;
        }
    }
    Ok(sum)
}

pub fn bessel_j0<T: Real>(x: T) -> Result<T> {
    bessel_j(0, x)
}

pub fn bessel_j1<T: Real>(x: T) -> Result<T> {
    bessel_j(1, x)
}
