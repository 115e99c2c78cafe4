use crate::error::{param, Result};

/// Bayesian information criterion, `k ln(n) - 2 loglik`.
pub fn bic(loglik: f64, n_params: usize, n: u64) -> Result<f64> {
    if n == 0 {
        return param("BIC needs a positive sample size");
    }
    Ok(n_params as f64 * (n as f64).ln() - 2.0 * loglik)
}

/// Per-comparison significance level for `m` simultaneous tests.
pub fn bonferroni_alpha(alpha: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return param("Bonferroni correction needs at least one comparison");
    }
    Ok(alpha / m as f64)
}

/// Shannon entropy in bits.
pub fn shannon_entropy(probs: &[f64]) -> Result<f64> {
    if let Some(p) = probs.iter().find(|&&p| p < 0.0 || p.is_nan()) {
        return param(format!("negative or NaN probability {p}"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return param(format!("probabilities sum to {total}, not 1"));
    }
    Ok(-probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bic_values() {
        assert_eq!(bic(0.0, 0, 100).unwrap(), 0.0);
        assert_abs_diff_eq!(bic(-109.861, 0, 100).unwrap(), 219.722, epsilon = 1e-9);
        assert_abs_diff_eq!(bic(-94.892, 1, 100).unwrap(), 194.389, epsilon = 1e-3);
        assert!(bic(0.0, 0, 0).is_err());
    }

    #[test]
    fn bonferroni_values() {
        assert_abs_diff_eq!(bonferroni_alpha(0.05, 10).unwrap(), 0.005, epsilon = 1e-18);
        assert_eq!(bonferroni_alpha(0.05, 1).unwrap(), 0.05);
        assert_abs_diff_eq!(bonferroni_alpha(0.05, 3).unwrap(), 0.0166667, epsilon = 1e-7);
        assert!(bonferroni_alpha(0.05, 0).is_err());
    }

    #[test]
    fn entropy_values() {
        // Distinct mode structures, nearly identical entropy.
        assert_abs_diff_eq!(shannon_entropy(&[0.45, 0.45, 0.1]).unwrap(), 1.369, epsilon = 1e-3);
        assert_abs_diff_eq!(shannon_entropy(&[0.6, 0.2, 0.2]).unwrap(), 1.371, epsilon = 1e-3);
        assert_eq!(shannon_entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(shannon_entropy(&[0.25; 4]).unwrap(), 2.0, epsilon = 1e-12);
        assert!(shannon_entropy(&[0.5, 0.6]).is_err());
        assert!(shannon_entropy(&[-0.1, 1.1]).is_err());
    }
}
