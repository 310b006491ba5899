//! SCAD penalty.

use crate::error::{MbiError, Result};

pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub a: f64,
}

impl PenaltySpec {
    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(MbiError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(a > 2.0) {
            return Err(MbiError::InvalidArgument(format!("SCAD shape must exceed 2, got {a}")));
        }
        Ok(Self { lambda, a })
    }

    pub fn scad(lambda: f64) -> Self {
        Self {
            lambda,
            a: DEFAULT_SCAD_A,
        }
    }

    /// Penalty summed over coordinates.
    pub fn total(&self, beta: &[f64]) -> f64 {
        beta.iter().map(|b| scad(b.abs(), self)).sum()
    }
}

/// `p_λ(b)` for `b ≥ 0`.
pub fn scad(b: f64, spec: &PenaltySpec) -> f64 {
    let (l, a) = (spec.lambda, spec.a);
    if b <= l {
        l * b
    } else if b <= a * l {
        (2.0 * a * l * b - b * b - l * l) / (2.0 * (a - 1.0))
    } else {
        (a + 1.0) * l * l / 2.0
    }
}

/// `p'_λ(b)` for `b ≥ 0`.
pub fn scad_prime(b: f64, spec: &PenaltySpec) -> f64 {
    let (l, a) = (spec.lambda, spec.a);
    if b <= l {
        l
    } else if b <= a * l {
        (a * l - b) / (a - 1.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let s = PenaltySpec::scad(1.0);
        assert_eq!(scad(0.0, &s), 0.0);
        assert_eq!(scad_prime(5.0, &s), 0.0);
        assert!((scad_prime(2.0, &s) - 1.7 / 2.7).abs() < 1e-15);
        assert!((scad_prime(2.0, &s) - 0.62963).abs() < 1e-5);
        assert!((scad(10.0, &s) - 4.7 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn continuous_at_knots() {
        let s = PenaltySpec::scad(0.8);
        for knot in [0.8, 3.7 * 0.8] {
            let lo = scad(knot - 1e-12, &s);
            let hi = scad(knot + 1e-12, &s);
            assert!((lo - hi).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_integrates_to_penalty() {
        let s = PenaltySpec::scad(0.7);
        let end = 2.0 * s.a * s.lambda;
        let steps = 20_000;
        let h = end / steps as f64;
        let mut integral = 0.0;
        for i in 0..steps {
            let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
            let xm = 0.5 * (x0 + x1);
            integral += h / 6.0 * (scad_prime(x0, &s) + 4.0 * scad_prime(xm, &s) + scad_prime(x1, &s));
            if i % 1000 == 999 {
                assert!((integral - scad(x1, &s)).abs() < 1e-6);
            }
        }
        assert!((integral - scad(end, &s)).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(PenaltySpec::new(1.0, 2.0).is_err());
        assert!(PenaltySpec::new(-1.0, 3.7).is_err());
    }
}
