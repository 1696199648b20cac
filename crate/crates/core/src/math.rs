//! Scalar math helpers shared across the crate.
//!
//! Transcendental functions go through `libm` so the crate stays `no_std`
//! and produces identical results on every platform.

/// Largest `f64` strictly below 1.
pub const ONE_MINUS_EPS: f64 = 1.0 - f64::EPSILON / 2.0;

/// Smallest positive value the sigmoid is allowed to return.
const SIGMOID_FLOOR: f64 = 1e-300;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Numerically stable logistic sigmoid, clamped into the open interval (0, 1).
///
/// The branch form never evaluates `exp` on a positive argument, so there is
/// no overflow for any finite input; the clamp keeps extreme inputs from
/// rounding to exactly 0 or 1.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, ONE_MINUS_EPS)
}

/// Arithmetic mean. Returns `None` on an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population (divide-by-n) standard deviation around a given mean.
pub fn population_std(xs: &[f64], mean: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    Some(sqrt(var))
}

/// Least-squares slope of `y` against `x`. Returns `None` with fewer than
/// two points or when all `x` coincide.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    if sxx == 0.0 {
        return None;
    }
    let sxy = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_midpoint_and_symmetry() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid(2.0);
        assert!((s - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!((sigmoid(-2.0) + s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_stays_inside_open_unit_interval() {
        for z in [-1e9, -1e4, -745.0, 745.0, 1e4, 1e9] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0, "sigmoid({z}) = {s} left (0,1)");
        }
    }

    #[test]
    fn stats_small_cases() {
        assert_eq!(mean(&[]), None);
        assert_eq!(mean(&[10.0, 20.0]), Some(15.0));
        assert_eq!(population_std(&[10.0, 20.0], 15.0), Some(5.0));
        assert_eq!(population_std(&[7.0], 7.0), Some(0.0));
    }

    #[test]
    fn slope_of_exact_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        let s = least_squares_slope(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-12);
        assert_eq!(least_squares_slope(&pts[..1]), None);
    }
}
