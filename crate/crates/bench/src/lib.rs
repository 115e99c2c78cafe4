//! Fixtures shared by the benchmarks.

use kscope_core::ResponseCounts;

/// Counts closest to `n * probs`, with the rounding remainder on the first option.
pub fn expected_counts(probs: &[f64], n: u64, n_invalid: u64) -> ResponseCounts {
    let mut per_option: Vec<u64> = probs.iter().map(|p| (p * n as f64).floor() as u64).collect();
    let assigned: u64 = per_option.iter().sum();
    if let Some(first) = per_option.first_mut() {
        *first += n - assigned;
    }
    ResponseCounts { n_total: n + n_invalid, per_option, n_invalid }
}
