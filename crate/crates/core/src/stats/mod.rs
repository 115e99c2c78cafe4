//! Statistical primitives behind the characterization hierarchy.
//!
//! Exact binomial and multinomial tests, the plateau-constrained multinomial
//! fit with its likelihood-ratio refinement step, and the small helpers
//! (BIC, Bonferroni, entropy, Spearman) used by the analysis modules.

mod binomial;
mod info;
mod multinomial;
mod plateau;
mod spearman;

use serde::{Deserialize, Serialize};

pub use binomial::{binomial_test_one_sided, Direction};
pub use info::{bic, bonferroni_alpha, shannon_entropy};
pub use multinomial::{
    composition_count, exact_multinomial_uniform_test, exact_multinomial_uniform_test_with_budget,
    monte_carlo_multinomial_uniform_test, multinomial_uniform_test, DEFAULT_ENUMERATION_BUDGET,
    DEFAULT_MONTE_CARLO_DRAWS,
};
pub use plateau::{constrained_plateau_mle, lrt_step, LrtCandidate, PlateauModel};
pub use spearman::{average_ranks, spearman_rank_corr, SpearmanResult};

/// Result of a single hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// Test statistic. For exact tests this is the probability of the
    /// observed outcome under the null.
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom, present only for asymptotic reference distributions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub df: Option<u32>,
    /// Standard error of a Monte-Carlo p-value estimate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_error: Option<f64>,
}

impl TestOutcome {
    pub(crate) fn exact(statistic: f64, p_value: f64) -> Self {
        Self {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            df: None,
            std_error: None,
        }
    }
}

/// `ln(k!)` for `k = 0..=n`.
pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

/// `x * ln(p)` with the convention `0 * ln 0 = 0`.
pub(crate) fn xlogy(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * p.ln()
    }
}
