use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ln_factorials, TestOutcome};
use crate::error::{param, Error, Result};

/// Largest number of compositions enumerated before the exact test refuses.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;

/// Draws used by the Monte-Carlo fallback.
pub const DEFAULT_MONTE_CARLO_DRAWS: usize = 1_000_000;

// Outcomes whose log-probability is within this margin of the observed one
// count as ties and enter the tail.
const LOG_TIE_MARGIN: f64 = 1e-7;

/// Number of compositions of `n` into `d` nonnegative parts, `C(n+d-1, d-1)`.
pub fn composition_count(n: u64, d: usize) -> f64 {
    let k = d.saturating_sub(1) as u64;
    let mut acc = 1.0f64;
    for i in 1..=k {
        acc *= (n + i) as f64 / i as f64;
    }
    acc.round()
}

/// Two-sided exact multinomial goodness-of-fit test against the uniform
/// distribution over `counts.len()` categories.
///
/// The p-value is the total null probability of all outcomes that are no
/// more probable than the observed one.
pub fn exact_multinomial_uniform_test(counts: &[u64]) -> Result<TestOutcome> {
    exact_multinomial_uniform_test_with_budget(counts, DEFAULT_ENUMERATION_BUDGET)
}

pub fn exact_multinomial_uniform_test_with_budget(counts: &[u64], budget: u64) -> Result<TestOutcome> {
    let (n, d) = validate(counts)?;
    let outcomes = composition_count(n, d);
    if outcomes > budget as f64 {
        return Err(Error::Capacity { outcomes, budget });
    }

    let lf = ln_factorials(n as usize);
    let log_norm = lf[n as usize] - n as f64 * (d as f64).ln();
    let observed = log_norm - counts.iter().map(|&c| lf[c as usize]).sum::<f64>();
    let cutoff = observed + LOG_TIE_MARGIN;

    let mut total = 0.0;
    enumerate(n as usize, d, 0.0, &lf, &mut |ln_denominator| {
        let ln_p = log_norm - ln_denominator;
        if ln_p <= cutoff {
            total += ln_p.exp();
        }
    });
    Ok(TestOutcome::exact(observed.exp(), total))
}

// Visits every composition of `remaining` into `parts` parts, passing the
// accumulated sum of ln(z_i!).
fn enumerate(remaining: usize, parts: usize, acc: f64, lf: &[f64], visit: &mut impl FnMut(f64)) {
    if parts == 1 {
        visit(acc + lf[remaining]);
        return;
    }
    for z in 0..=remaining {
        enumerate(remaining - z, parts - 1, acc + lf[z], lf, visit);
    }
}

/// Monte-Carlo estimate of the exact multinomial uniform p-value.
pub fn monte_carlo_multinomial_uniform_test(counts: &[u64], draws: usize, seed: u64) -> Result<TestOutcome> {
    let (n, d) = validate(counts)?;
    if draws == 0 {
        return param("Monte-Carlo test needs at least one draw");
    }
    let lf = ln_factorials(n as usize);
    let log_norm = lf[n as usize] - n as f64 * (d as f64).ln();
    let observed_denominator: f64 = counts.iter().map(|&c| lf[c as usize]).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0usize; d];
    let mut hits = 0usize;
    for _ in 0..draws {
        sample.iter_mut().for_each(|s| *s = 0);
        for _ in 0..n {
            sample[rng.random_range(0..d)] += 1;
        }
        let denominator: f64 = sample.iter().map(|&c| lf[c]).sum();
        // Larger denominator means smaller probability.
        if denominator >= observed_denominator - LOG_TIE_MARGIN {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    Ok(TestOutcome {
        statistic: (log_norm - observed_denominator).exp(),
        p_value: p,
        df: None,
        std_error: Some((p * (1.0 - p) / draws as f64).sqrt()),
    })
}

/// Exact test when the enumeration fits the budget, Monte-Carlo otherwise.
pub fn multinomial_uniform_test(counts: &[u64], budget: u64, draws: usize, seed: u64) -> Result<TestOutcome> {
    match exact_multinomial_uniform_test_with_budget(counts, budget) {
        Err(Error::Capacity { .. }) => monte_carlo_multinomial_uniform_test(counts, draws, seed),
        other => other,
    }
}

fn validate(counts: &[u64]) -> Result<(u64, usize)> {
    let d = counts.len();
    if d < 2 {
        return param(format!("multinomial test needs at least 2 categories, got {d}"));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return param("multinomial test needs at least one observation");
    }
    Ok((n, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn balanced_outcome_has_unit_p_value() {
        let out = exact_multinomial_uniform_test(&[2, 2, 2]).unwrap();
        assert_abs_diff_eq!(out.p_value, 1.0, epsilon = 1e-12);
        let out = exact_multinomial_uniform_test(&[34, 33, 33]).unwrap();
        assert_abs_diff_eq!(out.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_outcome() {
        // Only the three point-mass compositions are as improbable as [6,0,0].
        let out = exact_multinomial_uniform_test(&[6, 0, 0]).unwrap();
        assert_abs_diff_eq!(out.p_value, 3.0 / 729.0, epsilon = 1e-15);
    }

    #[test]
    fn composition_counts() {
        assert_eq!(composition_count(6, 3), 28.0);
        assert_eq!(composition_count(100, 3), 5151.0);
        assert_eq!(composition_count(5, 1), 1.0);
    }

    #[test]
    fn budget_exceeded_reports_capacity() {
        let err = exact_multinomial_uniform_test_with_budget(&[10, 10, 10], 100).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
        let out = multinomial_uniform_test(&[10, 10, 10], 100, 20_000, 7).unwrap();
        assert!(out.std_error.is_some());
        let exact = exact_multinomial_uniform_test(&[10, 10, 10]).unwrap();
        assert!((out.p_value - exact.p_value).abs() < 0.02);
    }

    #[test]
    fn monte_carlo_tracks_exact() {
        let counts = [9, 2, 1];
        let exact = exact_multinomial_uniform_test(&counts).unwrap();
        let mc = monte_carlo_multinomial_uniform_test(&counts, 200_000, 11).unwrap();
        assert!((mc.p_value - exact.p_value).abs() < 5.0 * mc.std_error.unwrap() + 1e-3);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(exact_multinomial_uniform_test(&[5]).is_err());
        assert!(exact_multinomial_uniform_test(&[0, 0]).is_err());
    }
}
