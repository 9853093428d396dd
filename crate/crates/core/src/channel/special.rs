//! Zero-order Bessel kernels used for port correlation.

use std::f64::consts::PI;

/// Spherical Bessel function of the first kind, order zero: `sin(x) / x`.
pub fn spherical_j0(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Bessel function of the first kind, order zero.
///
/// Evaluated from the integral representation
/// `J0(x) = (1/2π) ∫ cos(x sin t) dt` over one period with the trapezoidal
/// rule. The integrand is smooth and periodic, so the rule converges
/// geometrically once the node count exceeds `|x|` by a margin; the error is
/// bounded by `2 |J_M(x)|` for `M` nodes.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    let nodes = 2 * (ax.ceil() as usize) + 64;
    let step = 2.0 * PI / nodes as f64;
    let sum: f64 = (0..nodes).map(|i| (ax * (i as f64 * step).sin()).cos()).sum();
    sum / nodes as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    // High-precision references (30-digit arbitrary-precision evaluation).
    #[test]
    fn spherical_matches_reference() {
        assert_eq!(spherical_j0(0.0), 1.0);
        let x = 4.0 * PI / 7.0;
        assert!((spherical_j0(x) - 0.543_076_087_336_994_6).abs() < 1e-15);
        assert!(spherical_j0(PI).abs() < 1e-15);
    }

    #[test]
    fn bessel_matches_reference() {
        let cases = [
            (0.0, 1.0),
            (1.0, 0.765_197_686_557_966_6),
            (2.404_825_557_695_773, -6.108_765_259_736_73e-17),
            (10.0, -0.245_935_764_451_348_34),
            (25.5, 0.144_062_157_546_847_86),
            (40.0, 0.007_366_890_584_237_29),
        ];
        for (x, want) in cases {
            let got = bessel_j0(x);
            assert!((got - want).abs() < 1e-14, "J0({x}) = {got}, want {want}");
            assert_eq!(got, bessel_j0(-x));
        }
    }
}
