use super::{
    estimate_distribution, KScopeConfig, KnowledgeStatus, ModeSet, ResponseCounts, StatusReport,
    Step, StepRecord,
};
use crate::error::{param, Result};
use crate::stats::{
    bic, binomial_test_one_sided, lrt_step, multinomial_uniform_test, xlogy, Direction, TestOutcome,
};

/// Maps a mode set and the gold answer to one of the five statuses.
///
/// `gold = None` means the gold answer is not in the support (possible in
/// the open-ended setting), which makes every non-absent status wrong.
pub fn assign_status(mode_set: &ModeSet, gold: Option<usize>, d: usize) -> Result<KnowledgeStatus> {
    if let Some(&i) = mode_set.indices().iter().find(|&&i| i >= d) {
        return param(format!("mode index {i} outside support of size {d}"));
    }
    if let Some(g) = gold {
        if g >= d {
            return param(format!("gold index {g} outside support of size {d}"));
        }
    }
    let correct = gold.is_some_and(|g| mode_set.contains(g));
    Ok(match mode_set.len() {
        1 if correct => KnowledgeStatus::ConsistentCorrect,
        1 => KnowledgeStatus::ConsistentWrong,
        m if m == d => KnowledgeStatus::Absent,
        _ if correct => KnowledgeStatus::ConflictingCorrect,
        _ => KnowledgeStatus::ConflictingWrong,
    })
}

fn describe(set: &[usize]) -> String {
    let inner: Vec<String> = set.iter().map(usize::to_string).collect();
    format!("{{{}}}", inner.join(","))
}

struct Trail(Vec<StepRecord>);

impl Trail {
    fn push(&mut self, step: Step, hypothesis: String, outcome: Option<TestOutcome>, decision: &str) {
        self.0.push(StepRecord {
            step,
            hypothesis,
            outcome,
            decision: decision.to_string(),
        });
    }
}

/// Runs the four-step hierarchy on one question's response tallies.
pub fn characterize(
    counts: &ResponseCounts,
    gold: Option<usize>,
    config: &KScopeConfig,
) -> Result<StatusReport> {
    config.validate()?;
    counts.validate()?;
    if counts.n_total == 0 {
        return param("no responses to characterize");
    }
    let d = counts.d();
    if let Some(g) = gold {
        if g >= d {
            return param(format!("gold index {g} outside support of size {d}"));
        }
    }
    let distribution = estimate_distribution(counts)?;
    let mut trail = Trail(Vec::new());
    let mode_set = refine_modes(counts, config, &mut trail)?;
    let status = assign_status(&mode_set, gold, d)?;
    Ok(StatusReport {
        question_id: String::new(),
        counts: counts.clone(),
        distribution,
        mode_set,
        status,
        gold,
        step_trail: trail.0,
    })
}

fn refine_modes(counts: &ResponseCounts, config: &KScopeConfig, trail: &mut Trail) -> Result<ModeSet> {
    let d = counts.d();
    let alpha = config.alpha;

    // Step 1: excess of invalid responses.
    let invalid = binomial_test_one_sided(
        counts.n_invalid,
        counts.n_total,
        config.invalid_null_rate,
        Direction::Greater,
    )?;
    let hypothesis = format!("invalid rate > {}", config.invalid_null_rate);
    if invalid.p_value < alpha {
        trail.push(Step::InvalidResponses, hypothesis, Some(invalid), "significant: absent");
        return Ok(ModeSet::full(d));
    }
    trail.push(Step::InvalidResponses, hypothesis, Some(invalid), "not significant");

    if counts.n_valid() == 0 {
        trail.push(Step::UniformGuessing, "no valid responses".into(), None, "absent");
        return Ok(ModeSet::full(d));
    }
    if d == 1 {
        trail.push(Step::UniformGuessing, "single-element support".into(), None, "singleton mode set");
        return ModeSet::new(vec![0]);
    }

    // Step 2: departure from uniform guessing over valid responses.
    let uniform = multinomial_uniform_test(
        &counts.per_option,
        config.enumeration_budget,
        config.monte_carlo_draws,
        config.monte_carlo_seed,
    )?;
    if uniform.p_value >= alpha {
        trail.push(Step::UniformGuessing, "non-uniform".into(), Some(uniform), "not significant: absent");
        return Ok(ModeSet::full(d));
    }
    trail.push(Step::UniformGuessing, "non-uniform".into(), Some(uniform), "significant");

    // Step 3: shrink the plateau one element at a time.
    let mut current: Vec<usize> = (0..d).collect();
    let mut round = 0;
    while current.len() > 2 && round < config.max_refinement_rounds {
        round += 1;
        let candidates = lrt_step(&counts.per_option, &current, alpha)?;
        let mut winner: Option<(f64, &[usize])> = None;
        for c in &candidates {
            let decision = if !c.constraint_satisfied {
                "rejected: constraint violated"
            } else if c.significant {
                "significant"
            } else {
                "not significant"
            };
            trail.push(
                Step::ConflictingKnowledge { round },
                describe(&c.candidate.mode_set),
                Some(c.outcome),
                decision,
            );
            if c.significant {
                let score = c.candidate.bic();
                if winner.is_none_or(|(best, _)| score < best) {
                    winner = Some((score, &c.candidate.mode_set));
                }
            }
        }
        match winner {
            Some((_, set)) => {
                trail.push(
                    Step::ConflictingKnowledge { round },
                    describe(set),
                    None,
                    "adopted: lowest BIC",
                );
                current = set.to_vec();
            }
            None => break,
        }
    }
    if current.len() != 2 {
        return ModeSet::new(current);
    }

    // Step 4: are the two remaining elements distinguishable?
    let (i, j) = (current[0], current[1]);
    let (ni, nj) = (counts.per_option[i], counts.per_option[j]);
    let n = ni + nj;
    let per_test_alpha = alpha / 2.0;
    let greater = binomial_test_one_sided(ni, n, 0.5, Direction::Greater)?;
    let less = binomial_test_one_sided(ni, n, 0.5, Direction::Less)?;
    let mut accepted: Vec<(usize, f64)> = Vec::new();
    for (outcome, keep, valid, other) in [(greater, i, ni > nj, j), (less, j, ni < nj, i)] {
        let hypothesis = format!("p{keep} > p{other}");
        let decision = if !valid {
            "discarded: direction invalid"
        } else if outcome.p_value < per_test_alpha {
            accepted.push((keep, conditional_bic(ni, nj)));
            "significant"
        } else {
            "not significant"
        };
        trail.push(Step::ConsistentKnowledge, hypothesis, Some(outcome), decision);
    }
    let chosen = accepted
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(keep, _)| keep);
    match chosen {
        Some(keep) => {
            trail.push(Step::ConsistentKnowledge, describe(&[keep]), None, "adopted");
            ModeSet::new(vec![keep])
        }
        None => ModeSet::new(current),
    }
}

// BIC of the one-parameter conditional binomial fit on the two remaining
// elements.
fn conditional_bic(ni: u64, nj: u64) -> f64 {
    let n = ni + nj;
    let p = ni as f64 / n as f64;
    let loglik = xlogy(ni as f64, p) + xlogy(nj as f64, 1.0 - p);
    bic(loglik, 1, n).unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use KnowledgeStatus::*;

    fn run(per_option: &[u64], invalid: u64, gold: usize) -> StatusReport {
        let counts = ResponseCounts::new(per_option.to_vec(), invalid).unwrap();
        characterize(&counts, Some(gold), &KScopeConfig::default()).unwrap()
    }

    #[test]
    fn taxonomy_mapping() {
        let set = |v: Vec<usize>| ModeSet::new(v).unwrap();
        assert_eq!(assign_status(&set(vec![1]), Some(1), 3).unwrap(), ConsistentCorrect);
        assert_eq!(assign_status(&set(vec![2]), Some(1), 3).unwrap(), ConsistentWrong);
        assert_eq!(assign_status(&set(vec![0, 1, 2]), Some(0), 3).unwrap(), Absent);
        assert_eq!(assign_status(&set(vec![0, 2]), Some(1), 3).unwrap(), ConflictingWrong);
        assert_eq!(assign_status(&set(vec![0, 2]), Some(2), 3).unwrap(), ConflictingCorrect);
        assert_eq!(assign_status(&set(vec![0, 2]), None, 3).unwrap(), ConflictingWrong);
        assert!(assign_status(&set(vec![0]), Some(3), 3).is_err());
    }

    #[test]
    fn dominant_option_is_consistent_correct() {
        let r = run(&[90, 5, 5], 0, 0);
        assert_eq!(r.status, ConsistentCorrect);
        assert_eq!(r.mode_set.indices(), &[0]);
    }

    #[test]
    fn near_uniform_is_absent_at_step_two() {
        let r = run(&[34, 33, 33], 0, 0);
        assert_eq!(r.status, Absent);
        let last = r.step_trail.last().unwrap();
        assert_eq!(last.step, Step::UniformGuessing);
        assert!((last.outcome.unwrap().p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_way_split_is_conflicting() {
        let r = run(&[48, 47, 5], 0, 2);
        assert_eq!(r.status, ConflictingWrong);
        assert_eq!(r.mode_set.indices(), &[0, 1]);
    }

    #[test]
    fn invalid_majority_is_absent_at_step_one() {
        let r = run(&[10, 5, 5], 80, 0);
        assert_eq!(r.status, Absent);
        assert_eq!(r.step_trail.len(), 1);
        let p = r.step_trail[0].outcome.unwrap().p_value;
        assert!((p - 5.5795e-10).abs() < 1e-13);
    }

    #[test]
    fn all_invalid_without_significance_is_absent() {
        let r = run(&[0, 0, 0], 2, 0);
        assert_eq!(r.status, Absent);
        assert!(!r.distribution.is_defined());
    }

    #[test]
    fn binary_support_skips_refinement() {
        let r = run(&[80, 20], 0, 1);
        assert_eq!(r.status, ConsistentWrong);
        assert!(r
            .step_trail
            .iter()
            .all(|s| !matches!(s.step, Step::ConflictingKnowledge { .. })));
        let r = run(&[52, 48], 0, 1);
        assert_eq!(r.status, Absent);
    }

    #[test]
    fn tied_pair_keeps_both_modes() {
        // Step 2 rejects uniformity, Step 3 keeps {0,1}, and the tie leaves
        // both one-sided alternatives direction-invalid.
        let r = run(&[45, 45, 10], 0, 0);
        assert_eq!(r.mode_set.indices(), &[0, 1]);
        assert_eq!(r.status, ConflictingCorrect);
        let step4: Vec<_> = r
            .step_trail
            .iter()
            .filter(|s| s.step == Step::ConsistentKnowledge)
            .collect();
        assert_eq!(step4.len(), 2);
        assert!(step4.iter().all(|s| s.decision.starts_with("discarded")));
    }

    #[test]
    fn larger_support_refines_over_rounds() {
        let r = run(&[60, 15, 5, 5, 5], 0, 0);
        assert_eq!(r.status, ConsistentCorrect);
        let rounds = r
            .step_trail
            .iter()
            .filter_map(|s| match s.step {
                Step::ConflictingKnowledge { round } => Some(round),
                _ => None,
            })
            .max()
            .unwrap();
        assert!(rounds <= 3);
        let r = run(&[30, 30, 30, 5, 5], 0, 4);
        assert_eq!(r.status, ConflictingWrong);
        assert_eq!(r.mode_set.indices(), &[0, 1, 2]);
    }

    #[test]
    fn single_cluster_support() {
        let r = run(&[20], 0, 0);
        assert_eq!(r.status, ConsistentCorrect);
        let counts = ResponseCounts::new(vec![20], 0).unwrap();
        let r = characterize(&counts, None, &KScopeConfig::default()).unwrap();
        assert_eq!(r.status, ConsistentWrong);
    }

    #[test]
    fn gold_out_of_range_rejected() {
        let counts = ResponseCounts::new(vec![5, 5, 5], 0).unwrap();
        assert!(characterize(&counts, Some(3), &KScopeConfig::default()).is_err());
    }
}
