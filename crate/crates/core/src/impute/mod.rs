//! Generative imputation of masked view entries through the generative
//! latent space, with per-entry predictive variance.

pub mod baseline;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::inference::Observations;
use crate::math::{invert_precision, trace_of_product};
use crate::state::ModelState;

/// Filled views and the predictive variance of every masked cell (zero at
/// observed cells).
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub values: Vec<DMatrix<f64>>,
    pub variances: Vec<DMatrix<f64>>,
    pub observed: Vec<DMatrix<bool>>,
}

/// Precomputed pieces of `q(g_*)` restricted to the observed cells of a row.
pub struct GenerativePosterior<'a> {
    state: &'a ModelState,
    full: DMatrix<f64>,
    loading_moments: Vec<Vec<DMatrix<f64>>>,
    psi: Vec<f64>,
    label_precision: DMatrix<f64>,
}

impl<'a> GenerativePosterior<'a> {
    pub fn new(state: &'a ModelState) -> Self {
        let s = state.s();
        let psi: Vec<f64> = state.psi.iter().map(|p| p.mean(0)).collect();
        let mut full = DMatrix::identity(s, s);
        for (m, v) in state.v.iter().enumerate() {
            full += v.second_moment() * psi[m];
        }
        let loading_moments = state
            .v
            .iter()
            .map(|v| (0..v.nrows()).map(|d| v.row_second_moment(d)).collect())
            .collect();
        Self {
            state,
            full,
            loading_moments,
            psi,
            label_precision: state.vy.second_moment() * state.eta.mean(0),
        }
    }

    /// Posterior mean and covariance of `g` for one row given its observed
    /// cells. `label_residual`, when given, is `⟨y_n⟩ − ⟨z_n⟩⟨U⟩ᵀ` and adds
    /// the output-view term.
    pub fn row(
        &self,
        values: &[DVector<f64>],
        observed: &[Vec<bool>],
        label_residual: Option<&DVector<f64>>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let st = self.state;
        let s = st.s();
        let mut prec = self.full.clone();
        let mut rhs = DVector::zeros(s);
        for (m, v) in st.v.iter().enumerate() {
            let x = DVector::from_fn(observed[m].len(), |d, _| if observed[m][d] { values[m][d] } else { 0.0 });
            rhs.gemv_tr(self.psi[m], &v.mean, &x, 1.0);
            for (d, _) in observed[m].iter().enumerate().filter(|(_, &o)| !o) {
                prec -= &self.loading_moments[m][d] * self.psi[m];
            }
        }
        if let Some(r) = label_residual {
            prec += &self.label_precision;
            rhs += st.vy.mean.tr_mul(r) * st.eta.mean(0);
        }
        let (cov, _) = invert_precision(&prec, "q(g*)")?;
        Ok((&cov * rhs, cov))
    }
}

fn impute_core(
    state: &ModelState,
    values: &[&DMatrix<f64>],
    observed: &[&DMatrix<bool>],
    labeled: Option<&[bool]>,
) -> Result<ImputationResult> {
    if values.len() != state.n_views() || values.iter().zip(state.view_dims()).any(|(v, d)| v.ncols() != d) {
        return Err(Error::Structural("dataset views do not match the model".into()));
    }
    let n = values[0].nrows();
    let post = GenerativePosterior::new(state);
    let label_resid = labeled.map(|_| &state.y.mean - &state.z.mean * state.u.mean.transpose());
    let psi: Vec<f64> = state.psi.iter().map(|p| p.mean(0)).collect();

    type RowFill = Vec<Vec<(usize, f64, f64)>>;
    let rows: Vec<(RowFill, bool)> = (0..n)
        .into_par_iter()
        .map(|r| -> Result<(RowFill, bool)> {
            let masks: Vec<Vec<bool>> = observed.iter().map(|o| o.row(r).iter().cloned().collect()).collect();
            if masks.iter().all(|m| m.iter().all(|&o| o)) {
                return Ok((vec![Vec::new(); values.len()], false));
            }
            let xs: Vec<DVector<f64>> = values.iter().map(|v| v.row(r).transpose()).collect();
            let resid = match (labeled, &label_resid) {
                (Some(l), Some(res)) if l[r] => Some(res.row(r).transpose()),
                _ => None,
            };
            let empty = resid.is_none() && masks.iter().all(|m| m.iter().all(|&o| !o));
            let (g, g_cov) = post.row(&xs, &masks, resid.as_ref())?;
            let ggt = &g * g.transpose() + &g_cov;
            let fills = state
                .v
                .iter()
                .enumerate()
                .map(|(m, v)| {
                    masks[m]
                        .iter()
                        .enumerate()
                        .filter(|(_, &o)| !o)
                        .map(|(d, _)| {
                            let vd = v.row_mean(d);
                            let cov_d = v.row_cov(d);
                            let mean = g.dot(&vd);
                            // E[(g·v)²] − (ḡ·v̄)² for independent g, v
                            let var = 1.0 / psi[m] + trace_of_product(&ggt, cov_d)
                                + (vd.transpose() * &g_cov * &vd)[(0, 0)];
                            (d, mean, var)
                        })
                        .collect()
                })
                .collect();
            Ok((fills, empty))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out_values: Vec<DMatrix<f64>> = values.iter().map(|v| (*v).clone()).collect();
    let mut variances: Vec<DMatrix<f64>> = values.iter().map(|v| DMatrix::zeros(v.nrows(), v.ncols())).collect();
    let mut n_empty = 0;
    for (r, (fills, empty)) in rows.into_iter().enumerate() {
        n_empty += empty as usize;
        for (m, cells) in fills.into_iter().enumerate() {
            for (d, mean, var) in cells {
                out_values[m][(r, d)] = mean;
                variances[m][(r, d)] = var;
            }
        }
    }
    if n_empty > 0 {
        warn!("{n_empty} rows have no observed entries and no label; imputed from the prior");
    }
    Ok(ImputationResult {
        values: out_values,
        variances,
        observed: observed.iter().map(|o| (*o).clone()).collect(),
    })
}

/// Imputes every masked cell of `ds`. When `ds` has as many rows as the
/// training data, rows are taken to be the training rows and labeled rows
/// also use the output-view term; otherwise rows are treated as new samples.
///
/// Values of `ds` must be on the training scale (standardized with the
/// training statistics).
pub fn impute(state: &ModelState, ds: &MultiViewDataset) -> Result<ImputationResult> {
    let values: Vec<&DMatrix<f64>> = ds.views.iter().map(|v| &v.values).collect();
    let observed: Vec<&DMatrix<bool>> = ds.views.iter().map(|v| &v.observed).collect();
    let aligned = ds.n_samples() == state.n_samples();
    impute_core(state, &values, &observed, aligned.then_some(ds.labels.labeled.as_slice()))
}

/// Replaces the working values of masked training cells by the current
/// imputations. Returns the largest absolute change.
pub fn refresh_training_imputations(state: &ModelState, obs: &mut Observations) -> Result<f64> {
    if !obs.has_missing() {
        return Ok(0.0);
    }
    let result = {
        let values: Vec<&DMatrix<f64>> = obs.views.iter().map(|v| &v.observed_only).collect();
        let observed: Vec<&DMatrix<bool>> = obs.views.iter().map(|v| &v.observed).collect();
        impute_core(state, &values, &observed, Some(&obs.labeled))?
    };
    let mut change: f64 = 0.0;
    for (view, fill) in obs.views.iter_mut().zip(&result.values) {
        change = change.max(view.set_imputed(fill));
    }
    Ok(change)
}
