//! Small floating-point helpers shared by the analytic modules.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

/// Natural logarithm of a big unsigned integer. Returns `-inf` for zero.
pub fn big_ln(value: &BigUint) -> f64 {
    if value.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = value.bits();
    if bits <= 1000 {
        return value.to_f64().map_or(f64::INFINITY, f64::ln);
    }
    let shift = bits - 64;
    let top = (value >> shift).to_f64().unwrap_or(f64::INFINITY);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Ratio `num / den` of two big integers as `f64`, exact to double rounding
/// even when both operands overflow `f64`.
pub fn big_ratio(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    (big_ln(num) - big_ln(den)).exp()
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `ln(sum(exp(terms)))`, stable against overflow, compensated.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    let mut acc = KahanSum::default();
    for &t in terms {
        acc.add((t - max).exp());
    }
    max + acc.total().ln()
}

/// Round to 12 significant decimal digits.
pub fn round_sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn big_ln_matches_f64_for_small_values() {
        let v = BigUint::from(123_456_789u64);
        assert!((big_ln(&v) - 123_456_789f64.ln()).abs() < 1e-12);
        assert_eq!(big_ln(&BigUint::zero()), f64::NEG_INFINITY);
    }

    #[test]
    fn big_ln_survives_huge_values() {
        let v = BigUint::from(3u32).pow(2000);
        let expected = 2000.0 * 3f64.ln();
        assert!((big_ln(&v) - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let terms = [1000.0, 1000.0];
        assert!((log_sum_exp(&terms) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn kahan_recovers_small_addends() {
        let mut s = KahanSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        assert!((s.total() - (1.0 + 1e-15)).abs() < 1e-17);
    }

    #[test]
    fn sig12_rounding() {
        assert_eq!(round_sig12(0.1234567890123456), 0.123456789012);
        assert_eq!(round_sig12(f64::INFINITY), f64::INFINITY);
    }
}
