//! Post-hoc interpretation of fitted models: cross-fold factor stability,
//! per-view variance explained and the Z/G similarity check.

use std::fmt::Write as _;

use log::warn;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::cosine;
use crate::state::ModelState;

/// Which factor matrix to collect from each fitted state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadingKind {
    /// Task-oriented weights, one column per Z dimension.
    Weights,
    /// Generative loadings, one column per active G dimension.
    Generative,
}

impl LoadingKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Weights => "w",
            Self::Generative => "v",
        }
    }
}

/// Factor matrices from several folds over a shared feature axis formed by
/// concatenating all views.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedLoadings {
    /// One `features × factors` matrix per fold.
    pub folds: Vec<DMatrix<f64>>,
    /// `view_bounds[m]..view_bounds[m + 1]` are the rows of view `m`.
    pub view_bounds: Vec<usize>,
    pub view_names: Vec<String>,
    pub feature_names: Vec<String>,
}

impl FoldedLoadings {
    pub fn new(
        folds: Vec<DMatrix<f64>>,
        view_bounds: Vec<usize>,
        view_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if folds.is_empty() {
            return Err(Error::Structural("no folds given".into()));
        }
        if let Some((i, f)) = folds.iter().enumerate().find(|(_, f)| f.nrows() != d) {
            return Err(Error::Structural(format!("fold {i} has {} features, expected {d}", f.nrows())));
        }
        let ok = view_bounds.first() == Some(&0)
            && view_bounds.last() == Some(&d)
            && view_bounds.windows(2).all(|w| w[0] <= w[1])
            && view_names.len() + 1 == view_bounds.len();
        if !ok {
            return Err(Error::Structural("view bounds do not partition the feature axis".into()));
        }
        Ok(Self {
            folds,
            view_bounds,
            view_names,
            feature_names,
        })
    }

    /// Collects W (transposed) or V from fitted states. Features are named
    /// `view:index` unless `feature_names` is given.
    pub fn from_states(states: &[ModelState], kind: LoadingKind, feature_names: Option<Vec<String>>) -> Result<Self> {
        let first = states.first().ok_or_else(|| Error::Structural("no states given".into()))?;
        let dims = first.view_dims();
        if let Some(s) = states.iter().find(|s| s.view_dims() != dims) {
            return Err(Error::Structural(format!(
                "state view dimensions {:?} differ from {:?}",
                s.view_dims(),
                dims
            )));
        }
        let mut bounds = vec![0];
        for d in &dims {
            bounds.push(bounds.last().unwrap() + d);
        }
        let names = feature_names.unwrap_or_else(|| {
            first
                .view_names
                .iter()
                .zip(&dims)
                .flat_map(|(v, &d)| (0..d).map(move |i| format!("{v}:{i}")))
                .collect()
        });
        let folds = states
            .iter()
            .map(|st| {
                let blocks: Vec<DMatrix<f64>> = match kind {
                    LoadingKind::Weights => st.w.iter().map(|w| w.mean.transpose()).collect(),
                    LoadingKind::Generative => st.v.iter().map(|v| v.mean.clone()).collect(),
                };
                let cols = blocks[0].ncols();
                let mut out = DMatrix::zeros(*bounds.last().unwrap(), cols);
                for (m, b) in blocks.iter().enumerate() {
                    out.rows_mut(bounds[m], b.nrows()).copy_from(b);
                }
                out
            })
            .collect();
        Self::new(folds, bounds, first.view_names.clone(), names)
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorMatch {
    pub fold: usize,
    pub index: usize,
    /// `+1` or `−1`: orientation of the matched column.
    pub sign: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableFactor {
    pub reference_fold: usize,
    pub factor: usize,
    pub matches: Vec<FactorMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableFactorSet {
    pub factors: Vec<StableFactor>,
    pub n_stable: usize,
    pub n_reference: usize,
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().cloned().collect()
}

/// Greedy one-to-one matching between the columns of `a` and `b`, highest
/// absolute cosine first, keeping pairs at or above `threshold`.
/// Returns `(column of a, column of b, signed cosine)`.
fn greedy_match(a: &DMatrix<f64>, b: &DMatrix<f64>, threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..a.ncols() {
        let ca = column(a, i);
        for j in 0..b.ncols() {
            let c = cosine(&ca, &column(b, j));
            if c.abs() >= threshold {
                pairs.push((i, j, c));
            }
        }
    }
    pairs.sort_by(|x, y| y.2.abs().total_cmp(&x.2.abs()).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut used_a = vec![false; a.ncols()];
    let mut used_b = vec![false; b.ncols()];
    let mut out = Vec::new();
    for (i, j, c) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j, c));
        }
    }
    out
}

/// Factors of fold 0 that recur with `|cos| ≥ cos_threshold` in at least
/// `min_folds − 1` other folds.
pub fn stable_factors(folded: &FoldedLoadings, cos_threshold: f64, min_folds: usize) -> StableFactorSet {
    let reference = &folded.folds[0];
    if folded.n_folds() < min_folds {
        warn!(
            "only {} folds available, fewer than the {min_folds} required; no factor can be stable",
            folded.n_folds()
        );
    }
    let mut matches: Vec<Vec<FactorMatch>> = vec![Vec::new(); reference.ncols()];
    for (f, other) in folded.folds.iter().enumerate().skip(1) {
        for (i, j, c) in greedy_match(reference, other, cos_threshold) {
            matches[i].push(FactorMatch {
                fold: f,
                index: j,
                sign: c.signum(),
                cosine: c,
            });
        }
    }
    let needed = min_folds.saturating_sub(1);
    let factors: Vec<StableFactor> = matches
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.len() >= needed && folded.n_folds() >= min_folds)
        .map(|(factor, matches)| StableFactor {
            reference_fold: 0,
            factor,
            matches,
        })
        .collect();
    StableFactorSet {
        n_stable: factors.len(),
        n_reference: reference.ncols(),
        factors,
    }
}

/// Share of a factor's squared norm carried by each view. A zero column
/// yields all zeros.
pub fn variance_explained(factor: &[f64], view_bounds: &[usize]) -> Vec<f64> {
    let total: f64 = factor.iter().map(|x| x * x).sum();
    view_bounds
        .windows(2)
        .map(|w| {
            let part: f64 = factor[w[0]..w[1]].iter().map(|x| x * x).sum();
            if total > 0.0 {
                part / total
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZgSimilarity {
    pub max_abs_cosine: f64,
    pub z_index: usize,
    pub g_index: usize,
}

/// Largest absolute cosine between any column of `⟨Z⟩` and any column of `⟨G⟩`.
pub fn zg_similarity(state: &ModelState) -> ZgSimilarity {
    let mut best = ZgSimilarity {
        max_abs_cosine: 0.0,
        z_index: 0,
        g_index: 0,
    };
    for k in 0..state.k() {
        let z = column(&state.z.mean, k);
        for s in 0..state.s() {
            let c = cosine(&z, &column(&state.g.mean, s)).abs();
            if c > best.max_abs_cosine {
                best = ZgSimilarity {
                    max_abs_cosine: c,
                    z_index: k,
                    g_index: s,
                };
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewContribution {
    pub view: String,
    pub fraction: f64,
    /// `(feature, loading)` by decreasing absolute loading.
    pub top_features: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorSummary {
    pub factor: usize,
    pub views: Vec<ViewContribution>,
}

/// For each stable factor of the reference fold, the views whose variance
/// share reaches `view_threshold` and their `top_n` features.
pub fn summarize_factors(
    folded: &FoldedLoadings,
    stable: &StableFactorSet,
    view_threshold: f64,
    top_n: usize,
) -> Vec<FactorSummary> {
    let reference = &folded.folds[0];
    stable
        .factors
        .iter()
        .map(|sf| {
            let col = column(reference, sf.factor);
            let fractions = variance_explained(&col, &folded.view_bounds);
            let views = fractions
                .iter()
                .enumerate()
                .filter(|(_, &f)| f >= view_threshold)
                .map(|(m, &fraction)| {
                    let (lo, hi) = (folded.view_bounds[m], folded.view_bounds[m + 1]);
                    let mut feats: Vec<(String, f64)> =
                        (lo..hi).map(|d| (folded.feature_names[d].clone(), col[d])).collect();
                    feats.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
                    feats.truncate(top_n);
                    ViewContribution {
                        view: folded.view_names[m].clone(),
                        fraction,
                        top_features: feats,
                    }
                })
                .collect();
            FactorSummary {
                factor: sf.factor,
                views,
            }
        })
        .collect()
}

/// Stability table: one row per reference factor.
pub fn stability_csv(folded: &FoldedLoadings, stable: &StableFactorSet) -> String {
    let mut s = String::from("factor,stable,n_matched_folds");
    for name in &folded.view_names {
        let _ = write!(s, ",var_{name}");
    }
    s.push('\n');
    let reference = &folded.folds[0];
    for j in 0..reference.ncols() {
        let found = stable.factors.iter().find(|f| f.factor == j);
        let fr = variance_explained(&column(reference, j), &folded.view_bounds);
        let _ = write!(s, "{j},{},{}", found.is_some(), found.map_or(0, |f| f.matches.len()));
        for f in fr {
            let _ = write!(s, ",{f}");
        }
        s.push('\n');
    }
    s
}

/// Reference-fold loading table with one column per factor.
pub fn loadings_csv(folded: &FoldedLoadings) -> String {
    let reference = &folded.folds[0];
    let mut s = String::from("view,feature");
    for j in 0..reference.ncols() {
        let _ = write!(s, ",f{j}");
    }
    s.push('\n');
    for m in 0..folded.view_names.len() {
        for d in folded.view_bounds[m]..folded.view_bounds[m + 1] {
            let _ = write!(s, "{},{}", folded.view_names[m], folded.feature_names[d]);
            for j in 0..reference.ncols() {
                let _ = write!(s, ",{}", reference[(d, j)]);
            }
            s.push('\n');
        }
    }
    s
}
