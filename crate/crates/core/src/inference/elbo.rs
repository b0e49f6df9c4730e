//! Closed-form evidence lower bound `E_q[ln p(Θ, t, X)] − E_q[ln q(Θ)]`, with
//! the label likelihood replaced by its quadratic-exponential bound.

use serde::Serialize;

use super::bound::jaakkola_lambda;
use super::observations::Observations;
use super::updates::{output_residual, task_residual, view_residual};
use crate::error::{Error, Result};
use crate::math::{ln_sigmoid, LN_2PI};
use crate::state::{GammaQ, GaussianRowsQ, ModelState};

/// Individual contributions to the bound, for diagnostics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ElboTerms {
    pub view_likelihood: f64,
    pub task_likelihood: f64,
    pub output_likelihood: f64,
    pub label_bound: f64,
    pub latent_prior: f64,
    pub weight_prior: f64,
    pub loading_prior: f64,
    pub gamma_prior: f64,
    pub gaussian_entropy: f64,
    pub gamma_entropy: f64,
}

impl ElboTerms {
    fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("view likelihood", self.view_likelihood),
            ("task likelihood", self.task_likelihood),
            ("output likelihood", self.output_likelihood),
            ("label bound", self.label_bound),
            ("latent prior", self.latent_prior),
            ("weight prior", self.weight_prior),
            ("loading prior", self.loading_prior),
            ("gamma prior", self.gamma_prior),
            ("gaussian entropy", self.gaussian_entropy),
            ("gamma entropy", self.gamma_entropy),
        ]
    }

    pub fn total(&self) -> f64 {
        self.named().iter().map(|(_, v)| v).sum()
    }
}

/// `E[ln N(W | 0, (row_prec_r · col_prec_c)⁻¹)]` summed over all entries of a
/// row-factorized Gaussian with independent Gamma row and column precisions.
fn double_ard_prior(q: &GaussianRowsQ, rows: &GammaQ, cols: &GammaQ) -> f64 {
    let (r, c) = (q.nrows() as f64, q.dim() as f64);
    let sq = q.squared_means();
    let quad = rows.means().dot(&(&sq * cols.means()));
    -0.5 * r * c * LN_2PI + 0.5 * c * rows.ln_means().sum() + 0.5 * r * cols.ln_means().sum() - 0.5 * quad
}

pub fn elbo_terms(state: &ModelState, obs: &Observations) -> Result<ElboTerms> {
    let n = state.n_samples() as f64;
    let (k, s, c) = (state.k() as f64, state.s() as f64, state.n_classes() as f64);
    let mut t = ElboTerms::default();
    let out = state.n_views();

    for (m, ov) in obs.views.iter().enumerate() {
        let psi = &state.psi[m];
        t.view_likelihood += 0.5 * ov.n_observed as f64 * (psi.ln_mean(0) - LN_2PI)
            - 0.5 * psi.mean(0) * view_residual(state, obs, m);
    }
    t.task_likelihood =
        0.5 * n * k * (state.tau.ln_mean(0) - LN_2PI) - 0.5 * state.tau.mean(0) * task_residual(state, obs);
    t.output_likelihood =
        0.5 * n * c * (state.eta.ln_mean(0) - LN_2PI) - 0.5 * state.eta.mean(0) * output_residual(state);

    for r in 0..state.n_samples() {
        if !obs.labeled[r] {
            continue;
        }
        let cov = state.y.row_cov(r);
        for j in 0..state.n_classes() {
            let y = state.y.mean[(r, j)];
            let y2 = y * y + cov[(j, j)];
            let xi = state.xi.xi[(r, j)];
            t.label_bound += y * obs.targets[(r, j)] - 0.5 * (y + xi) + ln_sigmoid(xi)
                - jaakkola_lambda(xi) * (y2 - xi * xi);
        }
    }

    t.latent_prior = -0.5 * n * s * LN_2PI - 0.5 * state.g.second_moment().trace() - 0.5 * c * k * LN_2PI
        - 0.5 * state.u.second_moment().trace();

    for m in 0..out {
        t.weight_prior += double_ard_prior(&state.w[m], &state.phi[m], &state.gamma[m]);
        t.loading_prior += double_ard_prior(&state.v[m], &state.lambda[m], &state.delta[m]);
    }
    t.loading_prior += double_ard_prior(&state.vy, &state.lambda[out], &state.delta[out]);

    let p = &state.hyper.priors;
    t.gamma_prior = state.tau.expected_log_prior(p.tau) + state.eta.expected_log_prior(p.eta);
    t.gamma_entropy = state.tau.entropy() + state.eta.entropy();
    for m in 0..out {
        t.gamma_prior += state.psi[m].expected_log_prior(p.psi)
            + state.phi[m].expected_log_prior(p.phi)
            + state.gamma[m].expected_log_prior(p.gamma)
            + state.delta[m].expected_log_prior(p.delta)
            + state.lambda[m].expected_log_prior(p.lambda);
        t.gamma_entropy += state.psi[m].entropy()
            + state.phi[m].entropy()
            + state.gamma[m].entropy()
            + state.delta[m].entropy()
            + state.lambda[m].entropy();
    }
    t.gamma_prior +=
        state.delta[out].expected_log_prior(p.delta_y) + state.lambda[out].expected_log_prior(p.lambda_y);
    t.gamma_entropy += state.delta[out].entropy() + state.lambda[out].entropy();

    t.gaussian_entropy = state.z.entropy("entropy of q(Z)")?
        + state.g.entropy("entropy of q(G)")?
        + state.y.entropy("entropy of q(Y)")?
        + state.u.entropy("entropy of q(U)")?
        + state.vy.entropy("entropy of q(V^Y)")?;
    for m in 0..out {
        t.gaussian_entropy += state.w[m].entropy("entropy of q(W)")? + state.v[m].entropy("entropy of q(V)")?;
    }
    Ok(t)
}

/// The lower bound `L(q)`. Errors name the first non-finite term.
pub fn compute_elbo(state: &ModelState, obs: &Observations) -> Result<f64> {
    let terms = elbo_terms(state, obs)?;
    if let Some((name, v)) = terms.named().iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::numerical(*name, format!("lower-bound term is {v}")));
    }
    Ok(terms.total())
}
