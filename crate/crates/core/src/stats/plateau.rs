use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{bic, xlogy, TestOutcome};
use crate::error::{param, Error, Result};

/// Two-level multinomial fit: the mode-set elements share one probability
/// and every other element of the support shares another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauModel {
    /// Mode elements, as indices into the original category list.
    pub mode_set: Vec<usize>,
    /// Categories the model is fitted over (the whole category list unless
    /// the fit was conditioned on a subset).
    pub support: Vec<usize>,
    pub high_prob: f64,
    pub low_prob: f64,
    pub loglik: f64,
    pub n_params: usize,
    /// Number of observations entering the fit.
    pub n: u64,
}

impl PlateauModel {
    pub fn is_full_support(&self) -> bool {
        self.mode_set.len() == self.support.len()
    }

    /// The plateau must sit strictly above the remaining elements.
    pub fn constraint_satisfied(&self) -> bool {
        self.is_full_support() || self.high_prob > self.low_prob + 1e-12
    }

    pub fn bic(&self) -> f64 {
        bic(self.loglik, self.n_params, self.n).unwrap_or(f64::INFINITY)
    }

    pub fn prob(&self, category: usize) -> f64 {
        if self.mode_set.contains(&category) {
            self.high_prob
        } else {
            self.low_prob
        }
    }
}

/// Maximum-likelihood plateau fit of `counts` with the given mode set.
///
/// A model with `m` mode elements over `d` categories has one free
/// parameter when `m < d` and none when `m = d` (the uniform model).
pub fn constrained_plateau_mle(counts: &[u64], mode_set: &[usize]) -> Result<PlateauModel> {
    let d = counts.len();
    let support: Vec<usize> = (0..d).collect();
    fit(counts, mode_set, &support)
}

fn fit(counts: &[u64], mode_local: &[usize], support: &[usize]) -> Result<PlateauModel> {
    let d = counts.len();
    if mode_local.is_empty() {
        return param("mode set must be nonempty");
    }
    let mut in_mode = vec![false; d];
    for &i in mode_local {
        if i >= d {
            return param(format!("mode index {i} outside {d} categories"));
        }
        if in_mode[i] {
            return param(format!("mode index {i} repeated"));
        }
        in_mode[i] = true;
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return param("plateau fit needs at least one observation");
    }

    let m = mode_local.len();
    let mode_total: u64 = mode_local.iter().map(|&i| counts[i]).sum();
    let nf = n as f64;
    let high = mode_total as f64 / (nf * m as f64);
    let low = if m == d {
        0.0
    } else {
        (n - mode_total) as f64 / (nf * (d - m) as f64)
    };
    let loglik = counts
        .iter()
        .zip(&in_mode)
        .map(|(&c, &mode)| xlogy(c as f64, if mode { high } else { low }))
        .sum();

    let mut mode_set: Vec<usize> = mode_local.iter().map(|&i| support[i]).collect();
    mode_set.sort_unstable();
    Ok(PlateauModel {
        mode_set,
        support: support.to_vec(),
        high_prob: high,
        low_prob: low,
        loglik,
        n_params: usize::from(m < d),
        n,
    })
}

/// One candidate evaluated by a refinement round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtCandidate {
    pub candidate: PlateauModel,
    pub lr_stat: f64,
    pub outcome: TestOutcome,
    /// Bonferroni-adjusted threshold applied in this round.
    pub adjusted_alpha: f64,
    pub constraint_satisfied: bool,
    pub significant: bool,
}

/// One refinement round: tests every mode set obtained by dropping a single
/// element of `current_set`.
///
/// The fit is conditioned on the responses that fall inside `current_set`,
/// so the null is the uniform plateau over `current_set` and each candidate
/// nests it with one extra parameter. On the first round `current_set` is
/// the full support and no conditioning takes place.
pub fn lrt_step(counts: &[u64], current_set: &[usize], alpha: f64) -> Result<Vec<LrtCandidate>> {
    if current_set.len() < 2 {
        return param("refinement needs a current mode set of at least 2 elements");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return param(format!("alpha {alpha} outside (0, 1)"));
    }
    if let Some(&bad) = current_set.iter().find(|&&i| i >= counts.len()) {
        return param(format!("mode index {bad} outside {} categories", counts.len()));
    }

    let sub: Vec<u64> = current_set.iter().map(|&i| counts[i]).collect();
    let size = sub.len();
    let all: Vec<usize> = (0..size).collect();
    let null = fit(&sub, &all, current_set)?;

    let mut fitted = Vec::with_capacity(size);
    for drop in 0..size {
        let mode: Vec<usize> = (0..size).filter(|&i| i != drop).collect();
        let alt = fit(&sub, &mode, current_set)?;
        let df = alt.n_params - null.n_params;
        let lr = 2.0 * (alt.loglik - null.loglik);
        if lr.is_nan() {
            return Err(Error::Numeric("likelihood ratio is NaN".into()));
        }
        let chi = ChiSquared::new(df as f64).map_err(|e| Error::Numeric(e.to_string()))?;
        let p_value = if lr <= 0.0 { 1.0 } else { chi.sf(lr) };
        let outcome = TestOutcome {
            statistic: lr,
            p_value: p_value.clamp(0.0, 1.0),
            df: Some(df as u32),
            std_error: None,
        };
        fitted.push((alt, lr, outcome));
    }

    let admissible = fitted.iter().filter(|(alt, _, _)| alt.constraint_satisfied()).count();
    let adjusted_alpha = if admissible == 0 { 0.0 } else { alpha / admissible as f64 };
    Ok(fitted
        .into_iter()
        .map(|(candidate, lr_stat, outcome)| {
            let constraint_satisfied = candidate.constraint_satisfied();
            LrtCandidate {
                significant: constraint_satisfied && outcome.p_value < adjusted_alpha,
                candidate,
                lr_stat,
                outcome,
                adjusted_alpha,
                constraint_satisfied,
            }
        })
        .collect())
}
