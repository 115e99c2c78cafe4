//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kscope_core::analysis::{
    fit_classifier, linear_shap, top_feature_frequency, FitOutcome, StratumKey,
};
use kscope_core::augment::AugmentationStrategy;
use kscope_core::client::{MockClient, SamplingConfig};
use kscope_core::features::{flesch_kincaid_grade, rouge2_scores, FeatureVector, N_FEATURES};
use kscope_core::stats::{binomial_test_one_sided, bonferroni_alpha, exact_multinomial_uniform_test, shannon_entropy, Direction};
use kscope_core::status::{sample_counts, stability_study, StudyConfig, SyntheticGenerator};
use kscope_core::workbench::{emit_reports, parse_dataset, run_pipeline, IngestOptions, PipelineOptions, RunManifest};
use kscope_core::{characterize, KScopeConfig, KnowledgeStatus};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok { Ok(detail) } else { Err(detail) }
}

// ---- criterion 1 -------------------------------------------------------

/// Tail probability by enumerating all 2^n Bernoulli sequences.
fn binomial_tail_brute(k: u64, n: u64, p: f64, dir: Direction) -> f64 {
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let ones = u64::from(mask.count_ones());
        let hit = match dir {
            Direction::Greater => ones >= k,
            Direction::Less => ones <= k,
        };
        if hit {
            total += p.powi(ones as i32) * (1.0 - p).powi((n - ones) as i32);
        }
    }
    total
}

/// All count vectors of length d summing to n, by odometer.
fn count_vectors(n: u64, d: usize) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut v = vec![0u64; d];
    loop {
        if v.iter().sum::<u64>() == n {
            out.push(v.clone());
        }
        let mut i = 0;
        loop {
            if i == d {
                return out;
            }
            v[i] += 1;
            if v[i] <= n {
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

fn multinomial_coefficient(v: &[u64]) -> u128 {
    let fact = |m: u64| (1..=m as u128).product::<u128>();
    fact(v.iter().sum()) / v.iter().map(|&x| fact(x)).product::<u128>()
}

/// Exact p-value in integer arithmetic: total weight of outcomes whose
/// multinomial coefficient does not exceed the observed one.
fn multinomial_brute(obs: &[u64]) -> f64 {
    let n: u64 = obs.iter().sum();
    let d = obs.len();
    let c_obs = multinomial_coefficient(obs);
    let mut hits: u128 = 0;
    for v in count_vectors(n, d) {
        let c = multinomial_coefficient(&v);
        if c <= c_obs {
            hits += c;
        }
    }
    hits as f64 / (d as f64).powi(n as i32)
}

/// Binomial pmf grown outward from the mode by the ratio recurrence.
fn binomial_tail_recurrence(k: u64, n: u64, p: f64, dir: Direction) -> f64 {
    let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
    let mut w = vec![0.0; n as usize + 1];
    w[mode as usize] = 1.0;
    let r = p / (1.0 - p);
    for j in mode..n {
        w[j as usize + 1] = w[j as usize] * (n - j) as f64 / (j + 1) as f64 * r;
    }
    for j in (1..=mode).rev() {
        w[j as usize - 1] = w[j as usize] * j as f64 / (n - j + 1) as f64 / r;
    }
    let total: f64 = w.iter().sum();
    let tail: f64 = match dir {
        Direction::Greater => w[k as usize..].iter().sum(),
        Direction::Less => w[..=k as usize].iter().sum(),
    };
    (tail / total).min(1.0)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;
    for n in 1..=12u64 {
        for k in 0..=n {
            for p in [0.5, 0.2, 0.73] {
                for dir in [Direction::Greater, Direction::Less] {
                    let got = binomial_test_one_sided(k, n, p, dir).map_err(|e| e.to_string())?.p_value;
                    worst = worst.max((got - binomial_tail_brute(k, n, p, dir)).abs());
                    cases += 1;
                }
            }
        }
        for d in 2..=4usize {
            for v in count_vectors(n, d) {
                let got = exact_multinomial_uniform_test(&v).map_err(|e| e.to_string())?.p_value;
                worst = worst.max((got - multinomial_brute(&v)).abs());
                cases += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.random_range(13..=2000u64);
        let k = rng.random_range(0..=n);
        let p = rng.random_range(0.02..0.98);
        let dir = if rng.random::<bool>() { Direction::Greater } else { Direction::Less };
        let got = binomial_test_one_sided(k, n, p, dir).map_err(|e| e.to_string())?.p_value;
        worst = worst.max((got - binomial_tail_recurrence(k, n, p, dir)).abs());
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-12 && secs < 60.0,
        format!("{cases} cases, max |diff| = {worst:.2e}, {secs:.1}s"),
    )
}

// ---- criteria 2, 3 -----------------------------------------------------

fn criterion_2() -> Check {
    let a = shannon_entropy(&[0.45, 0.45, 0.1]).map_err(|e| e.to_string())?;
    let b = shannon_entropy(&[0.6, 0.2, 0.2]).map_err(|e| e.to_string())?;
    ensure((a - 1.37).abs() <= 0.005 && (b - 1.37).abs() <= 0.005, format!("H = {a:.4}, {b:.4} bits"))
}

fn criterion_3() -> Check {
    let pairs = 5 * 4 / 2;
    let adj = bonferroni_alpha(0.05, pairs).map_err(|e| e.to_string())?;
    ensure(adj == 0.005, format!("{pairs} comparisons, alpha_adj = {adj}"))
}

// ---- criterion 4 -------------------------------------------------------

fn criterion_4() -> Check {
    use KnowledgeStatus::*;
    let start = Instant::now();
    let cfg = KScopeConfig::default();
    let cases: [(&str, Vec<f64>, f64, &[KnowledgeStatus]); 4] = [
        ("[0.8,0.1,0.1]", vec![0.8, 0.1, 0.1], 0.0, &[ConsistentCorrect, ConsistentWrong]),
        ("[0.45,0.45,0.1]", vec![0.45, 0.45, 0.1], 0.0, &[ConflictingCorrect, ConflictingWrong]),
        ("uniform", vec![1.0 / 3.0; 3], 0.0, &[Absent]),
        ("80% invalid", vec![0.8, 0.1, 0.1], 0.8, &[Absent]),
    ];
    let mut rates = Vec::new();
    let mut ok = true;
    for (i, (name, probs, invalid, expected)) in cases.into_iter().enumerate() {
        let g = SyntheticGenerator::new(probs, invalid).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut hits = 0;
        for _ in 0..200 {
            let counts = sample_counts(&g, 100, 1, 0.0, &mut rng);
            let s = characterize(&counts, Some(0), &cfg).map_err(|e| e.to_string())?.status;
            hits += usize::from(expected.contains(&s));
        }
        let rate = hits as f64 / 200.0;
        ok &= rate >= 0.9;
        rates.push(format!("{name} {:.1}%", 100.0 * rate));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(ok && secs < 120.0, format!("{} ({secs:.1}s)", rates.join(", ")))
}

// ---- criterion 5 -------------------------------------------------------

fn criterion_5() -> Check {
    let study = StudyConfig {
        generators: StudyConfig::default_generators(),
        n_values: vec![25, 50, 100],
        m_values: vec![1],
        trials: 200,
        sensitivity: 0.0,
        seed: 7,
    };
    let points = stability_study(&study, &KScopeConfig::default()).map_err(|e| e.to_string())?;
    let rates: Vec<f64> = points.iter().map(|p| p.change_rate).collect();
    let ok = rates.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let shown: Vec<String> = points.iter().map(|p| format!("N={} {:.1}%", p.n, 100.0 * p.change_rate)).collect();
    ensure(ok, shown.join(", "))
}

// ---- criteria 6, 7 -----------------------------------------------------

fn random_features(rng: &mut ChaCha8Rng) -> FeatureVector {
    let mut g = || -> f64 {
        // Box-Muller
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    FeatureVector {
        context_length: 0,
        readability: g(),
        unique_tokens: 0,
        embedding_similarity: g(),
        rouge2_recall: g(),
        rouge2_precision: g(),
        rouge2_f1: g(),
        question_perplexity: g(),
        context_perplexity: g(),
        question_entropy: g(),
        context_entropy: g(),
    }
}

fn rows_of(features: &[FeatureVector], first: &[f64]) -> Vec<Vec<f64>> {
    features
        .iter()
        .zip(first)
        .map(|(f, &x0)| {
            let mut r = f.to_array().to_vec();
            r[0] = x0;
            r
        })
        .collect()
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut importances = BTreeMap::new();
    let mut worst: f64 = 0.0;
    let mut fitted = 0;
    for (s_i, status) in KnowledgeStatus::ALL.iter().enumerate() {
        for model in ["m1", "m2", "m3"] {
            let n = 80 + 20 * s_i;
            let fvs: Vec<FeatureVector> = (0..n).map(|_| random_features(&mut rng)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let rows = rows_of(&fvs, &x0);
            // the informative feature depends on the stratum
            let j = (s_i + model.len()) % N_FEATURES;
            let labels: Vec<bool> = rows.iter().map(|r| r[j] + 0.5 * r[(j + 3) % N_FEATURES] + rng.random_range(-0.5..0.5) > 0.0).collect();
            let outcome = fit_classifier(&rows, &labels, 1).map_err(|e| e.to_string())?;
            let FitOutcome::Fitted(m) = outcome else { continue };
            if !m.retained {
                continue;
            }
            fitted += 1;
            let shap = linear_shap(&m, &rows).map_err(|e| e.to_string())?;
            for (row, phi) in rows.iter().zip(&shap.values) {
                let sum: f64 = phi.iter().sum::<f64>() + shap.base_value;
                worst = worst.max((sum - m.logit(row)).abs());
            }
            let mut imp = [0.0; N_FEATURES];
            for phi in &shap.values {
                for k in 0..N_FEATURES {
                    imp[k] += phi[k].abs() / shap.values.len() as f64;
                }
            }
            importances.insert(StratumKey { dataset: "synthetic".into(), model: model.into(), status: *status }, imp);
        }
    }
    let ranking = top_feature_frequency(&importances).map_err(|e| e.to_string())?;
    // exact in counts: every stratum contributes five memberships
    let sums: Vec<f64> = ranking
        .statuses
        .iter()
        .map(|s| s.entries.iter().map(|e| e.count).sum::<usize>() as f64 / s.strata as f64)
        .collect();
    let sums_ok = sums.iter().all(|&s| s == 5.0);
    ensure(
        fitted > 0 && worst <= 1e-9 && sums_ok,
        format!("{fitted} strata, max local-accuracy error {worst:.1e}, frequency sums {sums:?}"),
    )
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 500;
    let fvs: Vec<FeatureVector> = (0..n).map(|_| random_features(&mut rng)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows = rows_of(&fvs, &x0);
    // label = 1{feature 1 > 0}, flipped with probability 0.1
    let labels: Vec<bool> = x0.iter().map(|&x| (x > 0.0) ^ (rng.random::<f64>() < 0.1)).collect();
    let FitOutcome::Fitted(m) = fit_classifier(&rows, &labels, 3).map_err(|e| e.to_string())? else {
        return Err("stratum was excluded".into());
    };
    let shap = linear_shap(&m, &rows).map_err(|e| e.to_string())?;
    let mut imp = [0.0; N_FEATURES];
    for phi in &shap.values {
        for k in 0..N_FEATURES {
            imp[k] += phi[k].abs() / n as f64;
        }
    }
    let top = (0..N_FEATURES).max_by(|&a, &b| imp[a].total_cmp(&imp[b])).unwrap_or(usize::MAX);
    let margin = m.macro_f1 - m.dummy_macro_f1;
    ensure(
        margin >= 0.3 && top == 0,
        format!(
            "macro-F1 {:.3} vs dummy {:.3} (margin {margin:.3}), top feature index {top}",
            m.macro_f1, m.dummy_macro_f1
        ),
    )
}

// ---- criterion 8 -------------------------------------------------------

fn criterion_8() -> Check {
    let fk = flesch_kincaid_grade("The cat sat on the mat.").map_err(|e| e.to_string())?;
    let r = rouge2_scores("a b c d", "a b c e").map_err(|e| e.to_string())?;
    let third = 2.0 / 3.0;
    ensure(
        (fk + 1.45).abs() <= 0.01 && r == (third, third, third),
        format!("FK = {fk:.4}, ROUGE-2 = ({:.6}, {:.6}, {:.6})", r.0, r.1, r.2),
    )
}

// ---- criterion 9 -------------------------------------------------------

fn pipeline_once(root: &Path) -> Result<(), String> {
    let text: String = (0..12)
        .map(|i| {
            let option = ["superior", "inferior", "no difference"][i % 3];
            format!(
                "{{\"id\":\"q{i}\",\"question\":\"Is regimen R{i} better than comparator C{i}?\",\"options\":[\"superior\",\"inferior\",\"no difference\"],\"gold\":\"superior\",\"context\":\"In the trial of R{i}, the regimen was {option} to C{i}. Outcomes were tracked for five years.\",\"metadata\":{{\"title\":\"Trial {i}\",\"journal\":\"J Clin Oncol\"}}}}\n"
            )
        })
        .chain(std::iter::once(
            "{\"id\":\"open\",\"question\":\"Which city hosts the summit?\",\"gold\":\"Strasbourg\",\"context\":\"It is held in Strasbourg.\"}\n".to_string(),
        ))
        .collect();
    let records = parse_dataset(&text, IngestOptions { permute_options: true, seed: 9 }).map_err(|e| e.to_string())?;
    let mut manifest = RunManifest::new("toy", "mock", root.join("cache"), 2024);
    manifest.sampling = SamplingConfig::even(40, 8, 1.0).map_err(|e| e.to_string())?;
    let opts = PipelineOptions { features: true, analysis: true, strategies: AugmentationStrategy::ALL.to_vec() };
    let out = run_pipeline(&MockClient::new(2024), &manifest, &records, &opts).map_err(|e| e.to_string())?;
    emit_reports(&out, &root.join("reports")).map_err(|e| e.to_string())?;
    Ok(())
}

fn criterion_9() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline_once(a.path())?;
    pipeline_once(b.path())?;
    let mut names: Vec<String> = fs::read_dir(a.path().join("reports"))
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let x = fs::read(a.path().join("reports").join(name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.path().join("reports").join(name)).map_err(|e| e.to_string())?;
        if x != y {
            differing.push(name.clone());
        }
    }
    let required = ["transition_matrix.csv", "augmentation_deltas.csv", "status_distribution.csv"];
    let present = required.iter().all(|r| names.iter().any(|n| n == r));
    ensure(
        differing.is_empty() && present,
        format!("{} report files compared, differing: {differing:?}", names.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("exact-test oracle equivalence", criterion_1),
        ("entropy reproduction", criterion_2),
        ("Bonferroni reproduction", criterion_3),
        ("status recovery", criterion_4),
        ("stability across N", criterion_5),
        ("SHAP local accuracy", criterion_6),
        ("regression sanity", criterion_7),
        ("feature-value fixtures", criterion_8),
        ("end-to-end determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
