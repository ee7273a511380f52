//! Cross-validated fit metrics for a learned graph: how well the target's
//! graph parents predict it, against an all-features linear baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{fit_ols, CausalError, LinearModel};
use crate::dag::{Dag, DagError};
use crate::dataset::{encode_categoricals, kfold_split, Dataset, DatasetError};

#[derive(Debug, Error, PartialEq)]
pub enum FitnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("sequences must have equal length >= 2")]
    BadInput,
    #[error("zero variance input to correlation")]
    ZeroVariance,
}

/// Cross-validated prediction quality of a graph for one target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub target: String,
    pub k: usize,
    /// Mean of the per-fold mean squared errors.
    pub mse: f64,
    pub per_fold_mse: Vec<f64>,
    /// Correlation between pooled held-out predictions and the target.
    pub pearson: f64,
    /// Same protocol with every non-target column as a regressor.
    pub baseline_mse: f64,
}

/// Product-moment correlation of two equal-length sequences.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, FitnessError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(FitnessError::BadInput);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(FitnessError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Evaluates how well `g` predicts `target`: an OLS model of the target on
/// its graph parents is fit per training fold and scored on the held-out
/// fold. The baseline repeats the protocol with all other columns as
/// regressors.
pub fn evaluate_fit(
    g: &Dag,
    d: &Dataset,
    k: usize,
    target: &str,
    seed: u64,
) -> Result<FitReport, FitnessError> {
    let ti = g
        .node_index(target)
        .ok_or_else(|| DagError::UnknownNode(target.to_string()))?;
    let parent_names: Vec<String> = g
        .parents(ti)
        .iter()
        .map(|&p| g.node_name(p).to_string())
        .collect();
    let all_others: Vec<String> = d
        .column_names()
        .into_iter()
        .filter(|c| c != target)
        .collect();

    let plan = kfold_split(d.n_rows(), k, seed)?;
    let enc = encode_categoricals(d);
    let actual_all = enc.continuous(target)?;

    let mut per_fold_mse = Vec::with_capacity(k);
    let mut baseline_folds = Vec::with_capacity(k);
    let mut pooled_pred = Vec::new();
    let mut pooled_actual = Vec::new();

    for fold in 0..k {
        let train = d.select_rows(&plan.train_rows(fold))?;
        let test_rows = plan.fold_rows(fold);

        let model = fit_ols(target, &parent_names, &train)?;
        let mut sq = 0.0;
        for &row in &test_rows {
            let pred = predict(&model, &enc, row)?;
            let err = pred - actual_all[row];
            sq += err * err;
            pooled_pred.push(pred);
            pooled_actual.push(actual_all[row]);
        }
        per_fold_mse.push(sq / test_rows.len() as f64);

        let baseline = fit_ols(target, &all_others, &train)?;
        let mut sq = 0.0;
        for &row in &test_rows {
            let err = predict(&baseline, &enc, row)? - actual_all[row];
            sq += err * err;
        }
        baseline_folds.push(sq / test_rows.len() as f64);
    }

    let mse = per_fold_mse.iter().sum::<f64>() / k as f64;
    let baseline_mse = baseline_folds.iter().sum::<f64>() / k as f64;
    let pearson = pearson(&pooled_pred, &pooled_actual)?;
    Ok(FitReport {
        target: target.to_string(),
        k,
        mse,
        per_fold_mse,
        pearson,
        baseline_mse,
    })
}

/// Applies a fitted model to one row of the encoded dataset.
fn predict(model: &LinearModel, enc: &Dataset, row: usize) -> Result<f64, FitnessError> {
    let mut v = model.intercept();
    for (name, coef) in model.regressors.iter().zip(&model.coefficients) {
        v += coef * enc.continuous(name)?[row];
    }
    Ok(v)
}
