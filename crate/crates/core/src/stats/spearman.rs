use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{param, Error, Result};

// Largest sample size for which the permutation distribution is enumerated.
const EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Ranks starting at 1, with tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation of two equally long samples.
///
/// Inputs are ranked internally, so either raw scores or rank positions may
/// be passed. The p-value is exact (full permutation distribution) for
/// `n <= 8` and uses the Student-t approximation otherwise.
pub fn spearman_rank_corr(a: &[f64], b: &[f64]) -> Result<SpearmanResult> {
    if a.len() != b.len() {
        return param(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    let n = a.len();
    if n < 3 {
        return param(format!("Spearman correlation needs n >= 3, got {n}"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let rho = pearson(&ra, &rb).ok_or_else(|| Error::Numeric("constant ranking".into()))?;

    let p_value = if n <= EXACT_MAX_N {
        permutation_p_value(&ra, &rb, rho)
    } else if 1.0 - rho.abs() < 1e-12 {
        // Only the identity and the reversal reach |rho| = 1.
        2.0 / factorial(n)
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
        2.0 * dist.sf(t.abs())
    };
    Ok(SpearmanResult {
        rho,
        p_value: p_value.clamp(0.0, 1.0),
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

// Fraction of rearrangements of `rb` whose |rho| reaches the observed one.
fn permutation_p_value(ra: &[f64], rb: &[f64], observed: f64) -> f64 {
    let target = observed.abs() - 1e-12;
    let mut perm = rb.to_vec();
    let n = perm.len();
    let mut hits = 0u64;
    let mut total = 0u64;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let mut check = |p: &[f64]| {
        total += 1;
        if pearson(ra, p).is_some_and(|r| r.abs() >= target) {
            hits += 1;
        }
    };
    check(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            check(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_and_reversed() {
        let a: Vec<f64> = (1..=11).map(f64::from).collect();
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        let same = spearman_rank_corr(&a, &a).unwrap();
        assert_abs_diff_eq!(same.rho, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(same.p_value, 2.0 / 39916800.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman_rank_corr(&a, &rev).unwrap().rho, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn small_swap_example() {
        let r = spearman_rank_corr(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        // d = [-1, 1, -1, 1, 0], sum d^2 = 4, rho = 1 - 6*4/120.
        assert_abs_diff_eq!(r.rho, 0.8, epsilon = 1e-12);
        // 16 of the 120 rearrangements reach |rho| >= 0.8.
        assert_abs_diff_eq!(r.p_value, 16.0 / 120.0, epsilon = 1e-12);
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn argument_errors() {
        assert!(spearman_rank_corr(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman_rank_corr(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(spearman_rank_corr(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
