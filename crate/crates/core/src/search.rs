//! Derivative-free 1-D searches used by the tune-up.

use crate::scalar::Real;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum<T> {
    pub x: T,
    pub f: T,
    pub evaluations: usize,
}

/// Golden-section minimization of a unimodal function on [a, b].
pub fn golden_section<T: Real, F: FnMut(T) -> T>(mut f: F, a: T, b: T, tol: T, max_iter: usize) -> Minimum<T> {
    let r = T::lit(INV_PHI);
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut n = 2;
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        // ties go left so repeated runs pick the same point
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        n += 1;
    }
    if fc <= fd {
        Minimum { x: c, f: fc, evaluations: n }
    } else {
        Minimum { x: d, f: fd, evaluations: n }
    }
}

/// Vertex of the parabola through three points, if it opens upward.
pub fn parabolic_vertex<T: Real>(x: [T; 3], y: [T; 3]) -> Option<T> {
    let [x0, x1, x2] = x;
    let [y0, y1, y2] = y;
    let d1 = (x1 - x0) * (y1 - y2);
    let d2 = (x1 - x2) * (y1 - y0);
    let den = d1 - d2;
    if den.abs() <= T::epsilon() * (d1.abs() + d2.abs()) || den == T::zero() {
        return None;
    }
    // curvature must be positive for a minimum
    let curv = (y0 - y1) / (x0 - x1) - (y1 - y2) / (x1 - x2);
    if !(curv / (x0 - x2) > T::zero()) {
        return None;
    }
    Some(x1 - T::lit(0.5) * ((x1 - x0) * d1 - (x1 - x2) * d2) / den)
}

/// Evaluate on a grid, then refine around the best sample with one parabolic
/// step. Exact ties keep the lowest grid index.
pub fn grid_then_parabolic<T: Real, F: FnMut(T) -> T>(grid: &[T], mut f: F) -> Option<Minimum<T>> {
    if grid.is_empty() {
        return None;
    }
    let ys: Vec<T> = grid.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for i in 1..ys.len() {
        if ys[i] < ys[best] {
            best = i;
        }
    }
    let mut out = Minimum { x: grid[best], f: ys[best], evaluations: grid.len() };
    if best > 0 && best + 1 < grid.len() {
        let xs = [grid[best - 1], grid[best], grid[best + 1]];
        let fs = [ys[best - 1], ys[best], ys[best + 1]];
        if let Some(v) = parabolic_vertex(xs, fs) {
            if v > xs[0] && v < xs[2] {
                let fv = f(v);
                out.evaluations += 1;
                if fv < out.f {
                    out.x = v;
                    out.f = fv;
                }
            }
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_finds_quadratic_minimum() {
        let m = golden_section(|x: f64| (x - 0.3).powi(2) + 1.0, -2.0, 5.0, 1e-10, 200);
        assert!((m.x - 0.3).abs() < 1e-7, "{}", m.x);
        assert!((m.f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn golden_handles_reversed_bracket_and_f32() {
        let m = golden_section(|x: f32| (x + 1.0).abs(), 3.0, -4.0, 1e-5, 200);
        assert!((m.x + 1.0).abs() < 1e-4);
    }

    #[test]
    fn parabola_vertex_is_exact_for_parabola() {
        let f = |x: f64| 2.0 * (x - 1.25).powi(2) - 3.0;
        let v = parabolic_vertex([0.0, 1.0, 3.0], [f(0.0), f(1.0), f(3.0)]).unwrap();
        assert!((v - 1.25).abs() < 1e-12);
        // concave: no minimum
        let g = |x: f64| -f(x);
        assert!(parabolic_vertex([0.0, 1.0, 3.0], [g(0.0), g(1.0), g(3.0)]).is_none());
    }

    #[test]
    fn grid_tie_breaks_to_lowest() {
        let grid = [0.0, 1.0, 2.0, 3.0];
        let m = grid_then_parabolic(&grid, |x: f64| if x == 1.0 || x == 3.0 { 0.0 } else { 1.0 }).unwrap();
        assert_eq!(m.x, 1.0);
    }

    proptest! {
        #[test]
        fn grid_parabolic_exact_on_quadratics(c in 0.3f64..2.7, k in 0.1f64..10.0) {
            let grid: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
            let m = grid_then_parabolic(&grid, |x| k * (x - c).powi(2)).unwrap();
            prop_assert!((m.x - c).abs() < 1e-9);
        }
    }
}
