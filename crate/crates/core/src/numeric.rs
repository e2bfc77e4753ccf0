//! Small numeric helpers shared across modules.

use statrs::function::erf::erfc;

/// Binomial coefficient as a float; exact while the running product stays below 2^53.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    if acc < 9.0e15 {
        acc.round()
    } else {
        acc
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Round to the nearest integer, ties to even.
pub fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

/// Logarithm of `x` in base `base`.
pub fn log_base(x: f64, base: f64) -> f64 {
    x.ln() / base.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(3, 1), 3.0);
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(60, 30), 118264581564861424.0);
        let big = binomial(100, 50) / 100891344545564193334812497256.0_f64;
        assert!((big - 1.0).abs() < 1e-14);
        assert_eq!(binomial(4, 7), 0.0);
    }

    #[test]
    fn ties_go_to_even() {
        assert_eq!(round_half_even(2.5), 2.0);
        assert_eq!(round_half_even(3.5), 4.0);
        assert_eq!(round_half_even(-0.5), 0.0);
        assert_eq!(round_half_even(2.4), 2.0);
        assert_eq!(round_half_even(500_000.5), 500_000.0);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(5f64.sqrt()) - 0.987_326_340_661_265_9).abs() < 1e-12);
    }
}
