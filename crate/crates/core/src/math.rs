//! Small numeric helpers shared across modules.

use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

/// Euclidean remainder for a positive modulus.
pub fn rem_euclid(a: f64, m: f64) -> f64 {
    let r = a % m;
    if r < 0.0 {
        r + m
    } else {
        r
    }
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let w = rem_euclid(angle, TAU);
    // Can return exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let w = wrap_two_pi(angle);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Circular mean of a set of angles, in `[0, 2π)`. Returns `None` when the
/// resultant vector vanishes.
pub fn circular_mean<I: IntoIterator<Item = f64>>(angles: I) -> Option<f64> {
    let (mut s, mut c) = (0.0, 0.0);
    for a in angles {
        let (sa, ca) = a.sin_cos();
        s += sa;
        c += ca;
    }
    if s.hypot(c) < 1e-12 {
        return None;
    }
    Some(wrap_two_pi(s.atan2(c)))
}

/// Chi-square quantile with two degrees of freedom: `-2 ln(1 - p)`.
pub fn chi_square_2dof(confidence: f64) -> f64 {
    -2.0 * (1.0 - confidence).ln()
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Median of a slice (averaging the two middle values for even lengths).
/// Returns NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = alloc::vec::Vec::from(values);
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps() {
        assert_eq!(wrap_two_pi(-1e-20), 0.0);
        assert!((wrap_two_pi(-PI / 2.0) - 1.5 * PI).abs() < 1e-15);
        assert!((wrap_pi(1.5 * PI) + 0.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn chi_square_95() {
        assert!((chi_square_2dof(0.95) - 5.991_464_547).abs() < 1e-8);
    }

    #[test]
    fn circular_mean_across_zero() {
        let m = circular_mean([0.1, TAU - 0.1]).unwrap();
        assert!(m < 1e-12 || (TAU - m) < 1e-12);
    }
}
