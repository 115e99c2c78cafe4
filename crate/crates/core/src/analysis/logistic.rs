//! L2-regularized logistic regression with seeded stratified cross-validation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub const MIN_SAMPLES: usize = 50;
pub const MIN_PER_CLASS: usize = 10;
pub const CV_FOLDS: usize = 5;
pub const C_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    Uniform,
    /// Each class weighted by n / (2 n_class).
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Inverse regularization strength.
    pub c: f64,
    pub class_weight: ClassWeight,
}

pub fn hyperparameter_grid() -> Vec<Hyperparameters> {
    let mut grid = Vec::new();
    for c in C_GRID {
        for class_weight in [ClassWeight::Uniform, ClassWeight::Balanced] {
            grid.push(Hyperparameters { c, class_weight });
        }
    }
    grid
}

/// Column means and population standard deviations; a constant column gets 1.
pub fn standardization(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let p = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mut means = vec![0.0; p];
    for r in rows {
        for (m, x) in means.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut stds = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            stds[j] += (r[j] - means[j]).powi(2) / n;
        }
    }
    for s in &mut stds {
        *s = s.sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (means, stds)
}

pub fn normalize_row(row: &[f64], means: &[f64], stds: &[f64]) -> Vec<f64> {
    row.iter().zip(means).zip(stds).map(|((x, m), s)| (x - m) / s).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sample_weights(labels: &[bool], mode: ClassWeight) -> Vec<f64> {
    match mode {
        ClassWeight::Uniform => vec![1.0; labels.len()],
        ClassWeight::Balanced => {
            let n = labels.len() as f64;
            let pos = labels.iter().filter(|&&y| y).count() as f64;
            let neg = n - pos;
            labels
                .iter()
                .map(|&y| {
                    let nc = if y { pos } else { neg };
                    if nc > 0.0 { n / (2.0 * nc) } else { 0.0 }
                })
                .collect()
        }
    }
}

/// Fitted linear decision function on already-normalized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.logit(x) >= 0.0
    }
}

/// Minimizes Σ s_i·logloss_i + ||w||² / (2C) by damped Newton steps; the
/// intercept is not penalized.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], hp: Hyperparameters) -> Result<LinearModel> {
    if x.len() != y.len() || x.is_empty() {
        return param("logistic regression needs matching nonempty inputs");
    }
    if hp.c <= 0.0 || !hp.c.is_finite() {
        return param(format!("regularization strength must be positive, got {}", hp.c));
    }
    let n = x.len();
    let p = x[0].len();
    let dim = p + 1;
    let s = sample_weights(y, hp.class_weight);
    let lambda = 1.0 / hp.c;
    let design = DMatrix::from_fn(n, dim, |i, j| if j == p { 1.0 } else { x[i][j] });
    let target = DVector::from_fn(n, |i, _| if y[i] { 1.0 } else { 0.0 });
    let sw = DVector::from_vec(s);

    let objective = |beta: &DVector<f64>| -> f64 {
        let z = &design * beta;
        let loss: f64 = (0..n).map(|i| sw[i] * (log1pexp(z[i]) - target[i] * z[i])).sum();
        loss + 0.5 * lambda * beta.rows(0, p).norm_squared()
    };

    let mut beta = DVector::zeros(dim);
    let mut f = objective(&beta);
    for _ in 0..MAX_ITER {
        let z = &design * &beta;
        let probs = z.map(sigmoid);
        let resid = DVector::from_fn(n, |i, _| sw[i] * (probs[i] - target[i]));
        let mut grad = design.transpose() * resid;
        for j in 0..p {
            grad[j] += lambda * beta[j];
        }
        if grad.norm() < GRAD_TOL {
            return Ok(LinearModel { weights: beta.rows(0, p).iter().copied().collect(), intercept: beta[p] });
        }
        let curv = DVector::from_fn(n, |i, _| sw[i] * probs[i] * (1.0 - probs[i]));
        let mut hess = design.transpose() * DMatrix::from_diagonal(&curv) * &design;
        for j in 0..p {
            hess[(j, j)] += lambda;
        }
        // Keeps the unpenalized intercept direction positive definite.
        hess[(p, p)] += 1e-12;
        let chol = hess
            .cholesky()
            .ok_or_else(|| Error::Numeric("Hessian is not positive definite".into()))?;
        let step = chol.solve(&grad);
        // Near the optimum the objective change drops below rounding error.
        if grad.dot(&step) < 1e-10 * (1.0 + f.abs()) {
            beta -= &step;
            f = objective(&beta);
            continue;
        }
        let mut t = 1.0;
        loop {
            let candidate = &beta - &step * t;
            let fc = objective(&candidate);
            if fc <= f - 1e-4 * t * grad.dot(&step) || t < 1e-10 {
                beta = candidate;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Numeric(format!("logistic regression did not converge in {MAX_ITER} iterations")))
}

/// Unweighted mean of the two per-class F1 scores; 0/0 counts as 0.
pub fn macro_f1(truth: &[bool], pred: &[bool]) -> f64 {
    let f1 = |class: bool| {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == class, p == class) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fneg;
        if denom == 0.0 { 0.0 } else { 2.0 * tp / denom }
    };
    (f1(true) + f1(false)) / 2.0
}

/// Fold index per sample; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResult {
    /// Weights on z-scored features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    /// Mean cross-validated Macro-F1 of the selected hyperparameters.
    pub macro_f1: f64,
    pub dummy_macro_f1: f64,
    pub retained: bool,
    pub hyperparameters: Hyperparameters,
}

impl ClassifierResult {
    pub fn model(&self) -> LinearModel {
        LinearModel { weights: self.weights.clone(), intercept: self.intercept }
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        normalize_row(row, &self.feature_means, &self.feature_stds)
    }

    pub fn logit(&self, row: &[f64]) -> f64 {
        self.model().logit(&self.normalize(row))
    }

    /// Weights and intercept acting on raw (unnormalized) features.
    pub fn raw_weights(&self) -> (Vec<f64>, f64) {
        let w: Vec<f64> = self.weights.iter().zip(&self.feature_stds).map(|(w, s)| w / s).collect();
        let b = self.intercept - w.iter().zip(&self.feature_means).map(|(w, m)| w * m).sum::<f64>();
        (w, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub n: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted(ClassifierResult),
    Excluded(Exclusion),
}

impl FitOutcome {
    pub fn fitted(&self) -> Option<&ClassifierResult> {
        match self {
            FitOutcome::Fitted(r) => Some(r),
            FitOutcome::Excluded(_) => None,
        }
    }
}

fn cv_score(rows: &[Vec<f64>], labels: &[bool], folds: &[usize], hp: Hyperparameters) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..CV_FOLDS {
        let train: Vec<usize> = (0..rows.len()).filter(|&i| folds[i] != k).collect();
        let test: Vec<usize> = (0..rows.len()).filter(|&i| folds[i] == k).collect();
        let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let (means, stds) = standardization(&train_rows);
        let xs: Vec<Vec<f64>> = train_rows.iter().map(|r| normalize_row(r, &means, &stds)).collect();
        let ys: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let model = fit_logistic(&xs, &ys, hp)?;
        let truth: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let pred: Vec<bool> = test
            .iter()
            .map(|&i| model.predict(&normalize_row(&rows[i], &means, &stds)))
            .collect();
        total += macro_f1(&truth, &pred);
    }
    Ok(total / CV_FOLDS as f64)
}

/// Fits one stratum, or records why it was skipped.
pub fn fit_classifier(rows: &[Vec<f64>], labels: &[bool], seed: u64) -> Result<FitOutcome> {
    if rows.len() != labels.len() {
        return param("feature rows and labels differ in length");
    }
    if let Some(p) = rows.first().map(Vec::len) {
        if rows.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
            return param("feature rows must share a width and be finite");
        }
    }
    let n = rows.len();
    let n_positive = labels.iter().filter(|&&y| y).count();
    let n_negative = n - n_positive;
    let reason = if n < MIN_SAMPLES {
        Some(format!("{n} samples, fewer than {MIN_SAMPLES}"))
    } else if n_positive.min(n_negative) < MIN_PER_CLASS {
        Some(format!("minority class has {} samples, fewer than {MIN_PER_CLASS}", n_positive.min(n_negative)))
    } else {
        None
    };
    if let Some(reason) = reason {
        return Ok(FitOutcome::Excluded(Exclusion { n, n_positive, n_negative, reason }));
    }

    let folds = stratified_folds(labels, CV_FOLDS, seed);
    let mut best: Option<(Hyperparameters, f64)> = None;
    for hp in hyperparameter_grid() {
        let score = cv_score(rows, labels, &folds, hp)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((hp, score));
        }
    }
    let (hp, score) = best.expect("grid is nonempty");

    let (means, stds) = standardization(rows);
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| normalize_row(r, &means, &stds)).collect();
    let model = fit_logistic(&xs, labels, hp)?;
    let majority = n_positive > n_negative;
    let dummy_macro_f1 = macro_f1(labels, &vec![majority; n]);
    Ok(FitOutcome::Fitted(ClassifierResult {
        weights: model.weights,
        intercept: model.intercept,
        feature_means: means,
        feature_stds: stds,
        macro_f1: score,
        dummy_macro_f1,
        retained: score > dummy_macro_f1,
        hyperparameters: hp,
    }))
}
