use serde::{Deserialize, Serialize};

use super::{ln_factorials, TestOutcome};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
use crate::error::{param, Result};

/// Tail of a one-sided test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Alternative `p > p0`; tail `P(X >= k)`.
    Greater,
    /// Alternative `p < p0`; tail `P(X <= k)`.
    Less,
}

/// One-sided exact binomial test of `k` successes in `n` trials against `p0`.
///
/// The statistic is the point probability `P(X = k)` under the null.
pub fn binomial_test_one_sided(k: u64, n: u64, p0: f64, direction: Direction) -> Result<TestOutcome> {
    if n == 0 {
        return param("binomial test needs at least one trial");
    }
    if k > n {
        return param(format!("k = {k} exceeds n = {n}"));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return param(format!("null probability {p0} outside (0, 1)"));
    }

    let n_us = n as usize;
    let small = ln_factorials(15);
    let ln_pmf = |i: usize| ln_binom_pmf(i as f64, n as f64, p0, &small);

    let k_us = k as usize;
    let point = ln_pmf(k_us).exp();
    let p_value = match direction {
        Direction::Greater if k == 0 => 1.0,
        Direction::Less if k == n => 1.0,
        Direction::Greater => tail_sum((k_us..=n_us).map(ln_pmf)),
        Direction::Less => tail_sum((0..=k_us).map(ln_pmf)),
    };
    Ok(TestOutcome::exact(point, p_value))
}

/// ln(n!) minus its Stirling approximation.
fn stirlerr(n: f64, small: &[f64]) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        if n == 0.0 {
            return 0.0;
        }
        return small[n as usize] - ((n + 0.5) * n.ln() - n + 0.5 * LN_2PI);
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// x ln(x / m) + m - x without cancellation when x is close to m.
fn bd0(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Log binomial pmf in saddle-point form (Loader 2000).
fn ln_binom_pmf(x: f64, n: f64, p: f64, small: &[f64]) -> f64 {
    let q = 1.0 - p;
    if x == 0.0 {
        return if p < 0.1 { -bd0(n, n * q) - n * p } else { n * q.ln() };
    }
    if x == n {
        return if q < 0.1 { -bd0(n, n * p) - n * q } else { n * p.ln() };
    }
    let lc = stirlerr(n, small) - stirlerr(x, small) - stirlerr(n - x, small) - bd0(x, n * p) - bd0(n - x, n * q);
    let lf = LN_2PI + x.ln() + (-x / n).ln_1p();
    lc - 0.5 * lf
}

// Sum of exponentiated log terms, scaled by the largest term.
fn tail_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let scaled: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max.exp() * scaled).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn whole_distribution_tail_is_one() {
        let out = binomial_test_one_sided(0, 10, 0.5, Direction::Greater).unwrap();
        assert_eq!(out.p_value, 1.0);
        let out = binomial_test_one_sided(10, 10, 0.5, Direction::Less).unwrap();
        assert_eq!(out.p_value, 1.0);
    }

    #[test]
    fn single_point_tail() {
        let out = binomial_test_one_sided(10, 10, 0.5, Direction::Greater).unwrap();
        assert_abs_diff_eq!(out.p_value, 0.5f64.powi(10), epsilon = 1e-15);
        assert_abs_diff_eq!(out.statistic, 0.5f64.powi(10), epsilon = 1e-15);
    }

    #[test]
    fn fifteen_of_twenty() {
        // sum_{i=15}^{20} C(20, i) = 15504 + 4845 + 1140 + 190 + 20 + 1 = 21700
        let out = binomial_test_one_sided(15, 20, 0.5, Direction::Greater).unwrap();
        assert_abs_diff_eq!(out.p_value, 21700.0 / 1048576.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.p_value, 0.020695, epsilon = 1e-6);
    }

    #[test]
    fn eighty_invalid_of_hundred() {
        let out = binomial_test_one_sided(80, 100, 0.5, Direction::Greater).unwrap();
        assert_abs_diff_eq!(out.p_value, 5.5795e-10, epsilon = 1e-13);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(binomial_test_one_sided(3, 2, 0.5, Direction::Greater).is_err());
        assert!(binomial_test_one_sided(1, 2, 0.0, Direction::Greater).is_err());
        assert!(binomial_test_one_sided(1, 2, 1.0, Direction::Less).is_err());
        assert!(binomial_test_one_sided(0, 0, 0.5, Direction::Less).is_err());
    }
}
