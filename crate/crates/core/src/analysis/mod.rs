//! Which context features move a model to consistent correct knowledge.
//!
//! Samples are stratified by dataset, model and parametric status. Each
//! stratum gets a regularized logistic regression predicting update success
//! from the eleven features; retained strata contribute SHAP importances,
//! which are summarized as top-5 frequencies per status and compared across
//! statuses with Spearman correlations.

mod logistic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use logistic::{
    fit_classifier, fit_logistic, hyperparameter_grid, macro_f1, normalize_row, standardization,
    stratified_folds, ClassWeight, ClassifierResult, Exclusion, FitOutcome, Hyperparameters, LinearModel,
    CV_FOLDS, C_GRID, MIN_PER_CLASS, MIN_SAMPLES,
};

use crate::error::{param, Error, Result};
use crate::features::{Feature, FeatureVector, N_FEATURES};
use crate::stats::{bonferroni_alpha, spearman_rank_corr};
use crate::status::KnowledgeStatus;

pub const TOP_K: usize = 5;

pub fn label_update_success(_parametric: KnowledgeStatus, contextual: KnowledgeStatus) -> bool {
    contextual == KnowledgeStatus::ConsistentCorrect
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StratumKey {
    pub dataset: String,
    pub model: String,
    pub status: KnowledgeStatus,
}

pub fn fit_stratum_classifier(features: &[FeatureVector], labels: &[bool], seed: u64) -> Result<FitOutcome> {
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
    fit_classifier(&rows, labels, seed)
}

/// Per-sample SHAP values of a linear model on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    /// Logit at the mean normalized sample.
    pub base_value: f64,
    pub values: Vec<Vec<f64>>,
}

pub fn linear_shap(model: &ClassifierResult, rows: &[Vec<f64>]) -> Result<ShapValues> {
    if !model.retained {
        return Err(Error::Contract("SHAP requested for a classifier that did not beat the baseline".into()));
    }
    if rows.is_empty() {
        return param("SHAP needs at least one sample");
    }
    let p = model.weights.len();
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| model.normalize(r)).collect();
    let mut mean = vec![0.0; p];
    for x in &xs {
        for j in 0..p {
            mean[j] += x[j] / xs.len() as f64;
        }
    }
    let base_value = model.intercept + (0..p).map(|j| model.weights[j] * mean[j]).sum::<f64>();
    let values = xs
        .iter()
        .map(|x| (0..p).map(|j| model.weights[j] * (x[j] - mean[j])).collect())
        .collect();
    Ok(ShapValues { base_value, values })
}

/// Mean absolute SHAP value per feature.
pub fn linear_shap_importance(model: &ClassifierResult, features: &[FeatureVector]) -> Result<[f64; N_FEATURES]> {
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
    let shap = linear_shap(model, &rows)?;
    let mut imp = [0.0; N_FEATURES];
    for v in &shap.values {
        for j in 0..N_FEATURES {
            imp[j] += v[j].abs() / shap.values.len() as f64;
        }
    }
    Ok(imp)
}

/// Indices of the `TOP_K` largest importances; ties go to the lower index.
pub fn top_features(importance: &[f64; N_FEATURES]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..N_FEATURES).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    idx.truncate(TOP_K);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub feature: Feature,
    /// Strata with this feature in their top five.
    pub count: usize,
    /// Fraction of strata with this feature in their top five.
    pub frequency: f64,
    pub importance_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRanking {
    pub status: KnowledgeStatus,
    pub strata: usize,
    /// Descending frequency, then importance sum, then feature order.
    pub entries: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub statuses: Vec<StatusRanking>,
}

pub fn top_feature_frequency(importances: &BTreeMap<StratumKey, [f64; N_FEATURES]>) -> Result<ImportanceRanking> {
    if importances.is_empty() {
        return param("no strata to rank");
    }
    let mut statuses = Vec::new();
    for status in KnowledgeStatus::ALL {
        let strata: Vec<&[f64; N_FEATURES]> =
            importances.iter().filter(|(k, _)| k.status == status).map(|(_, v)| v).collect();
        if strata.is_empty() {
            continue;
        }
        let mut hits = [0usize; N_FEATURES];
        let mut sums = [0.0; N_FEATURES];
        for imp in &strata {
            for j in top_features(imp) {
                hits[j] += 1;
            }
            for j in 0..N_FEATURES {
                sums[j] += imp[j];
            }
        }
        let mut entries: Vec<RankEntry> = Feature::ALL
            .iter()
            .map(|&f| RankEntry {
                feature: f,
                count: hits[f.index()],
                frequency: hits[f.index()] as f64 / strata.len() as f64,
                importance_sum: sums[f.index()],
            })
            .collect();
        entries.sort_by(|a, b| {
            b.frequency
                .total_cmp(&a.frequency)
                .then(b.importance_sum.total_cmp(&a.importance_sum))
                .then(a.feature.cmp(&b.feature))
        });
        statuses.push(StatusRanking { status, strata: strata.len(), entries });
    }
    Ok(ImportanceRanking { statuses })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub rho: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub statuses: Vec<KnowledgeStatus>,
    pub adjusted_alpha: f64,
    pub cells: Vec<Vec<CorrelationCell>>,
}

/// Position of each feature (1 = most important) in a ranking.
fn rank_positions(r: &StatusRanking) -> Result<Vec<f64>> {
    let mut pos = vec![f64::NAN; N_FEATURES];
    for (i, e) in r.entries.iter().enumerate() {
        let slot = &mut pos[e.feature.index()];
        if !slot.is_nan() {
            return param(format!("feature {} ranked twice for {}", e.feature.name(), r.status));
        }
        *slot = (i + 1) as f64;
    }
    if pos.iter().any(|p| p.is_nan()) {
        return param(format!("ranking for {} does not cover every feature", r.status));
    }
    Ok(pos)
}

/// Pairwise Spearman correlations, tested at alpha over the number of pairs.
pub fn status_rank_correlations(rankings: &[StatusRanking], alpha: f64) -> Result<CorrelationMatrix> {
    let k = rankings.len();
    if k < 2 {
        return param("correlations need at least two status rankings");
    }
    let positions: Vec<Vec<f64>> = rankings.iter().map(rank_positions).collect::<Result<_>>()?;
    let adjusted_alpha = bonferroni_alpha(alpha, k * (k - 1) / 2)?;
    let diag = CorrelationCell { rho: 1.0, p_value: 0.0, significant: true };
    let mut cells = vec![vec![diag; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let s = spearman_rank_corr(&positions[i], &positions[j])?;
            let cell = CorrelationCell { rho: s.rho, p_value: s.p_value, significant: s.p_value < adjusted_alpha };
            cells[i][j] = cell;
            cells[j][i] = cell;
        }
    }
    Ok(CorrelationMatrix { statuses: rankings.iter().map(|r| r.status).collect(), adjusted_alpha, cells })
}
