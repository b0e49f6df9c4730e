//! Classification and imputation metrics.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney statistic; tied
/// positive/negative pairs count one half. `None` when a class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // midranks over the sorted scores
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUC over the classes present with both outcomes.
/// Binary problems use the score column of class 1.
pub fn multiclass_auc(scores: &DMatrix<f64>, labels: &[usize]) -> Option<f64> {
    let c = scores.ncols();
    if c == 2 {
        let col: Vec<f64> = scores.column(1).iter().cloned().collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return auc(&col, &pos);
    }
    let per: Vec<f64> = (0..c)
        .filter_map(|j| {
            let col: Vec<f64> = scores.column(j).iter().cloned().collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == j).collect();
            auc(&col, &pos)
        })
        .collect();
    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRates {
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Sensitivity and specificity of class `j` treated one-vs-rest.
/// Undefined rates (no positives or no negatives) are `NaN`.
pub fn class_rates(pred: &[usize], labels: &[usize], j: usize) -> ClassRates {
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in pred.iter().zip(labels) {
        match (l == j, p == j) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { f64::NAN } else { a as f64 / (a + b) as f64 };
    ClassRates {
        sensitivity: ratio(tp, fn_),
        specificity: ratio(tn, fp),
    }
}

/// Balanced accuracy: `(sens + spec) / 2` for two classes, averaged
/// one-vs-rest over the classes present in `labels` otherwise.
pub fn bacc(pred: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(pred.len(), labels.len());
    let c = pred.iter().chain(labels).max().map_or(1, |m| m + 1).max(2);
    if c == 2 {
        let r = class_rates(pred, labels, 1);
        return mean_defined(&[r.sensitivity, r.specificity]);
    }
    let per: Vec<f64> = (0..c)
        .filter(|j| labels.contains(j))
        .map(|j| {
            let r = class_rates(pred, labels, j);
            mean_defined(&[r.sensitivity, r.specificity])
        })
        .collect();
    mean_defined(&per)
}

fn mean_defined(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().cloned().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Root mean squared error over cells where `mask` is true.
pub fn rmse_masked(imputed: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<f64> {
    if imputed.shape() != truth.shape() || truth.shape() != mask.shape() {
        return Err(Error::Structural("rmse inputs differ in shape".into()));
    }
    let (sum, n) = imputed
        .iter()
        .zip(truth.iter())
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| (s + (a - b).powi(2), n + 1));
    Ok(if n == 0 { f64::NAN } else { (sum / n as f64).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub auc: f64,
    pub bacc: f64,
    pub per_class: Vec<ClassRates>,
    pub n_evaluated: usize,
}

impl MetricReport {
    pub fn new(scores: &DMatrix<f64>, pred: &[usize], labels: &[usize]) -> Self {
        Self {
            auc: multiclass_auc(scores, labels).unwrap_or(f64::NAN),
            bacc: bacc(pred, labels),
            per_class: (0..scores.ncols()).map(|j| class_rates(pred, labels, j)).collect(),
            n_evaluated: labels.len(),
        }
    }
}
