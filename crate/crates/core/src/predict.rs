//! Posterior-predictive classification.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::impute::GenerativePosterior;
use crate::math::{sigmoid, trace_of_product};
use crate::state::ModelState;

/// Latent posteriors for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentProjection {
    pub z: DMatrix<f64>,
    pub z_cov: Vec<DMatrix<f64>>,
    pub g: DMatrix<f64>,
    pub g_cov: Vec<DMatrix<f64>>,
}

/// Where the samples to predict come from.
#[derive(Debug, Clone, Copy)]
pub enum Projection<'a> {
    /// Rows of the training data, identified by index.
    Transductive(&'a [usize]),
    /// New samples, already on the training scale.
    Inductive(&'a MultiViewDataset),
}

/// Which latent spaces contribute to the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpaces {
    #[default]
    Zg,
    Z,
    G,
}

impl std::str::FromStr for LatentSpaces {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zg" => Ok(Self::Zg),
            "z" => Ok(Self::Z),
            "g" => Ok(Self::G),
            other => Err(Error::Config(format!("unknown latent space selection '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveOutput {
    pub proba: DMatrix<f64>,
    pub y_mean: DMatrix<f64>,
    pub y_var: DMatrix<f64>,
    pub hard_label: Vec<usize>,
}

impl PredictiveOutput {
    /// Probabilities rescaled to sum to one per row, for reporting only.
    pub fn normalized_proba(&self) -> DMatrix<f64> {
        let mut p = self.proba.clone();
        for mut row in p.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        p
    }
}

pub fn project_latents(state: &ModelState, projection: Projection<'_>) -> Result<LatentProjection> {
    match projection {
        Projection::Transductive(rows) => {
            if let Some(&bad) = rows.iter().find(|&&r| r >= state.n_samples()) {
                return Err(Error::Structural(format!(
                    "row {bad} is not a training row (N = {})",
                    state.n_samples()
                )));
            }
            Ok(LatentProjection {
                z: state.z.mean.select_rows(rows),
                z_cov: rows.iter().map(|&r| state.z.row_cov(r).clone()).collect(),
                g: state.g.mean.select_rows(rows),
                g_cov: rows.iter().map(|&r| state.g.row_cov(r).clone()).collect(),
            })
        }
        Projection::Inductive(ds) => project_inductive(state, ds),
    }
}

/// `q(g*)` from the observed cells alone (no output-view term); masked cells
/// are filled with `⟨g*⟩⟨V⟩ᵀ` and `⟨z*⟩ = Σ_m x* ⟨W⁽ᵐ⁾⟩ᵀ` with covariance
/// `⟨τ⟩⁻¹ I`.
fn project_inductive(state: &ModelState, ds: &MultiViewDataset) -> Result<LatentProjection> {
    if ds.view_dims() != state.view_dims() {
        return Err(Error::Structural(format!(
            "view dimensions {:?} do not match the model's {:?}",
            ds.view_dims(),
            state.view_dims()
        )));
    }
    let n = ds.n_samples();
    let (k, s) = (state.k(), state.s());
    let post = GenerativePosterior::new(state);
    let tau = state.tau.mean(0);
    let z_cov = DMatrix::identity(k, k) / tau;
    let mut out = LatentProjection {
        z: DMatrix::zeros(n, k),
        z_cov: Vec::with_capacity(n),
        g: DMatrix::zeros(n, s),
        g_cov: Vec::with_capacity(n),
    };
    for r in 0..n {
        let masks: Vec<Vec<bool>> = ds.views.iter().map(|v| v.observed.row(r).iter().cloned().collect()).collect();
        if masks.iter().all(|m| m.iter().all(|&o| !o)) {
            return Err(Error::Structural(format!("row {r} has every view fully missing")));
        }
        let xs: Vec<DVector<f64>> = ds.views.iter().map(|v| v.values.row(r).transpose()).collect();
        let (g, g_cov) = post.row(&xs, &masks, None)?;
        let mut z = DVector::zeros(k);
        for (m, x) in xs.iter().enumerate() {
            let filled = DVector::from_fn(x.len(), |d, _| {
                if masks[m][d] {
                    x[d]
                } else {
                    g.dot(&state.v[m].row_mean(d))
                }
            });
            z += &state.w[m].mean * filled;
        }
        out.z.row_mut(r).copy_from(&z.transpose());
        out.g.row_mut(r).copy_from(&g.transpose());
        out.z_cov.push(z_cov.clone());
        out.g_cov.push(g_cov);
    }
    Ok(out)
}

/// `Var[a·b]` for independent Gaussian vectors.
fn product_variance(a: &DVector<f64>, a_cov: &DMatrix<f64>, b: &DVector<f64>, b_cov: &DMatrix<f64>) -> f64 {
    trace_of_product(a_cov, b_cov) + (a.transpose() * b_cov * a)[(0, 0)] + (b.transpose() * a_cov * b)[(0, 0)]
}

/// Mean and variance of `y* = z* Uᵀ + g* V^Yᵀ + ε` with `Var[ε] = 1/⟨η⟩`.
pub fn predictive_moments(
    state: &ModelState,
    proj: &LatentProjection,
    spaces: LatentSpaces,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = proj.z.nrows();
    let c = state.n_classes();
    let noise = 1.0 / state.eta.mean(0);
    let use_z = spaces != LatentSpaces::G;
    let use_g = spaces != LatentSpaces::Z;
    let mut mean = DMatrix::zeros(n, c);
    let mut var = DMatrix::from_element(n, c, noise);
    for r in 0..n {
        let z = proj.z.row(r).transpose();
        let g = proj.g.row(r).transpose();
        for j in 0..c {
            if use_z {
                let u = state.u.row_mean(j);
                mean[(r, j)] += z.dot(&u);
                var[(r, j)] += product_variance(&z, &proj.z_cov[r], &u, state.u.row_cov(j));
            }
            if use_g {
                let v = state.vy.row_mean(j);
                mean[(r, j)] += g.dot(&v);
                var[(r, j)] += product_variance(&g, &proj.g_cov[r], &v, state.vy.row_cov(j));
            }
        }
    }
    (mean, var)
}

/// `σ(mean / sqrt(1 + π var / 8))`, elementwise.
pub fn predict_proba(y_mean: &DMatrix<f64>, y_var: &DMatrix<f64>) -> DMatrix<f64> {
    y_mean.zip_map(y_var, |m, v| sigmoid(m / (1.0 + PI * v / 8.0).sqrt()))
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict_label(proba: &DMatrix<f64>) -> Vec<usize> {
    proba
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn predict(state: &ModelState, projection: Projection<'_>, spaces: LatentSpaces) -> Result<PredictiveOutput> {
    let proj = project_latents(state, projection)?;
    let (y_mean, y_var) = predictive_moments(state, &proj, spaces);
    let proba = predict_proba(&y_mean, &y_var);
    let hard_label = predict_label(&proba);
    Ok(PredictiveOutput {
        proba,
        y_mean,
        y_var,
        hard_label,
    })
}
