//! Seeded synthetic studies of how stable the characterization is as the
//! number of samples and paraphrases grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{characterize, KScopeConfig, ResponseCounts};
use crate::error::{param, Result};

/// A ground-truth answer distribution plus an invalid-response rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGenerator {
    pub option_probs: Vec<f64>,
    #[serde(default)]
    pub invalid_prob: f64,
}

impl SyntheticGenerator {
    pub fn new(option_probs: Vec<f64>, invalid_prob: f64) -> Result<Self> {
        if option_probs.is_empty() {
            return param("generator needs at least one option");
        }
        if option_probs.iter().any(|&p| p < 0.0) || !(0.0..=1.0).contains(&invalid_prob) {
            return param("generator probabilities must be nonnegative");
        }
        if (option_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return param("option probabilities must sum to 1");
        }
        Ok(Self { option_probs, invalid_prob })
    }

    pub fn d(&self) -> usize {
        self.option_probs.len()
    }
}

fn draw_category(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws `n` responses from `generator`.
///
/// With `paraphrases > 1` the samples are split across paraphrases and each
/// paraphrase tilts the answer distribution toward one randomly chosen
/// option by `sensitivity`, a simple model of prompt sensitivity.
pub fn sample_counts(
    generator: &SyntheticGenerator,
    n: u64,
    paraphrases: u64,
    sensitivity: f64,
    rng: &mut impl Rng,
) -> ResponseCounts {
    let d = generator.d();
    let mut per_option = vec![0u64; d];
    let mut invalid = 0;
    let m = paraphrases.max(1);
    for k in 0..m {
        let share = n / m + u64::from(k < n % m);
        let probs: Vec<f64> = if m > 1 && sensitivity > 0.0 {
            let tilt = rng.random_range(0..d);
            generator
                .option_probs
                .iter()
                .enumerate()
                .map(|(i, &p)| (1.0 - sensitivity) * p + if i == tilt { sensitivity } else { 0.0 })
                .collect()
        } else {
            generator.option_probs.clone()
        };
        for _ in 0..share {
            if rng.random::<f64>() < generator.invalid_prob {
                invalid += 1;
            } else {
                per_option[draw_category(&probs, rng)] += 1;
            }
        }
    }
    let n_total = per_option.iter().sum::<u64>() + invalid;
    ResponseCounts { per_option, n_invalid: invalid, n_total }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub generators: Vec<SyntheticGenerator>,
    pub n_values: Vec<u64>,
    pub m_values: Vec<u64>,
    pub trials: usize,
    /// Per-paraphrase tilt; zero makes `m_values` irrelevant.
    pub sensitivity: f64,
    pub seed: u64,
}

impl StudyConfig {
    /// Generators covering every status structure on three options.
    pub fn default_generators() -> Vec<SyntheticGenerator> {
        [
            vec![0.8, 0.1, 0.1],
            vec![0.45, 0.45, 0.1],
            vec![0.6, 0.3, 0.1],
            vec![0.5, 0.25, 0.25],
            vec![1.0 / 3.0; 3],
            vec![0.55, 0.35, 0.1],
        ]
        .into_iter()
        .map(|p| SyntheticGenerator { option_probs: p, invalid_prob: 0.0 })
        .collect()
    }
}

/// Status-change rate between two independent resamples at one (M, N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub m: u64,
    pub n: u64,
    pub comparisons: usize,
    pub change_rate: f64,
}

/// For every `(m, n)` pair, characterizes two independent resamples per
/// generator and trial and reports how often the status differs.
pub fn stability_study(study: &StudyConfig, config: &KScopeConfig) -> Result<Vec<StabilityPoint>> {
    if study.generators.is_empty() || study.n_values.is_empty() || study.trials == 0 {
        return param("study needs generators, sample sizes and at least one trial");
    }
    let m_values = if study.m_values.is_empty() { vec![1] } else { study.m_values.clone() };
    let mut points = Vec::new();
    for &m in &m_values {
        for &n in &study.n_values {
            if n == 0 {
                return param("sample size must be positive");
            }
            let mut changes = 0usize;
            let mut comparisons = 0usize;
            for (g, generator) in study.generators.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(study.seed);
                rng.set_stream(((m << 40) ^ (n << 8) ^ g as u64).wrapping_add(1));
                for _ in 0..study.trials {
                    let a = sample_counts(generator, n, m, study.sensitivity, &mut rng);
                    let b = sample_counts(generator, n, m, study.sensitivity, &mut rng);
                    let sa = characterize(&a, Some(0), config)?.status;
                    let sb = characterize(&b, Some(0), config)?.status;
                    changes += usize::from(sa != sb);
                    comparisons += 1;
                }
            }
            points.push(StabilityPoint {
                m,
                n,
                comparisons,
                change_rate: changes as f64 / comparisons as f64,
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sizes_add_up() {
        let g = SyntheticGenerator::new(vec![0.5, 0.3, 0.2], 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [1, 3, 20] {
            let c = sample_counts(&g, 100, m, 0.3, &mut rng);
            assert_eq!(c.n_total, 100);
            c.validate().unwrap();
        }
    }

    #[test]
    fn study_is_deterministic() {
        let study = StudyConfig {
            generators: StudyConfig::default_generators(),
            n_values: vec![25],
            m_values: vec![5],
            trials: 10,
            sensitivity: 0.2,
            seed: 42,
        };
        let cfg = KScopeConfig::default();
        assert_eq!(stability_study(&study, &cfg).unwrap(), stability_study(&study, &cfg).unwrap());
    }

    #[test]
    fn generator_validation() {
        assert!(SyntheticGenerator::new(vec![0.5, 0.6], 0.0).is_err());
        assert!(SyntheticGenerator::new(vec![], 0.0).is_err());
    }
}
