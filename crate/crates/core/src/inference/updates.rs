//! Closed-form coordinate updates of every variational factor.
//!
//! Each function replaces one factor (or one family of independent factors)
//! by its optimum given all others. Masked view entries are excluded from the
//! reconstruction likelihood; the task-oriented regression uses the working
//! matrix where masked cells hold their current imputations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::bound::jaakkola_lambda;
use super::observations::Observations;
use crate::error::{Error, Result};
use crate::math::{invert_precision, trace_of_product};
use crate::state::{GammaQ, GaussianRowsQ, ModelState, RowCovariance};

fn ensure_finite(q: &GaussianRowsQ, term: &str) -> Result<()> {
    if q.is_finite() {
        Ok(())
    } else {
        Err(Error::numerical(term, "update produced non-finite values"))
    }
}

fn ensure_gamma(q: &GammaQ, term: &str) -> Result<()> {
    if q.is_valid() {
        Ok(())
    } else {
        Err(Error::numerical(term, "Gamma factor left the positive orthant"))
    }
}

/// `Σ_n E‖z_n − Σ_m x_n W⁽ᵐ⁾ᵀ‖²` over the working covariates.
pub fn task_residual(state: &ModelState, obs: &Observations) -> f64 {
    let mut pred = DMatrix::zeros(state.n_samples(), state.k());
    for (m, ov) in obs.views.iter().enumerate() {
        pred += &ov.working * state.w[m].mean.transpose();
    }
    let mut r = (&state.z.mean - pred).norm_squared() + state.z.sum_cov().trace();
    for (m, ov) in obs.views.iter().enumerate() {
        for k in 0..state.k() {
            r += trace_of_product(state.w[m].row_cov(k), &ov.gram);
        }
    }
    r
}

/// `Σ_n E‖y_n − z_n Uᵀ − g_n V^Yᵀ‖²`.
pub fn output_residual(state: &ModelState) -> f64 {
    let y = &state.y;
    let zu = &state.z.mean * state.u.mean.transpose();
    let gv = &state.g.mean * state.vy.mean.transpose();
    y.mean.norm_squared() + y.sum_cov().trace()
        + trace_of_product(&state.z.second_moment(), &state.u.second_moment())
        + trace_of_product(&state.g.second_moment(), &state.vy.second_moment())
        - 2.0 * y.mean.dot(&zu)
        - 2.0 * y.mean.dot(&gv)
        + 2.0 * zu.dot(&gv)
}

/// `Σ_{(n,d) observed} E(x_nd − g_n v_dᵀ)²` for view `m`.
pub fn view_residual(state: &ModelState, obs: &Observations, m: usize) -> f64 {
    let ov = &obs.views[m];
    let v = &state.v[m];
    let recon = &state.g.mean * v.mean.transpose();
    let cross = ov.observed_only.dot(&recon);
    let mut quad = trace_of_product(&state.g.second_moment(), &v.second_moment());
    for (n, cols) in ov.missing_by_row.iter().enumerate() {
        if cols.is_empty() {
            continue;
        }
        let s = state.s();
        let masked = cols
            .iter()
            .fold(DMatrix::zeros(s, s), |acc, &d| acc + v.row_second_moment(d));
        quad -= trace_of_product(&state.g.row_second_moment(n), &masked);
    }
    ov.sum_sq_observed - 2.0 * cross + quad
}

/// `q(Y)`: labeled rows get the bounded logistic term, unlabeled rows only
/// the Gaussian output model.
pub fn update_y(state: &mut ModelState, obs: &Observations) -> Result<()> {
    let eta = state.eta.mean(0);
    let pred = &state.z.mean * state.u.mean.transpose() + &state.g.mean * state.vy.mean.transpose();
    let (n, c) = pred.shape();
    let mut mean = DMatrix::zeros(n, c);
    let mut covs = Vec::with_capacity(n);
    for r in 0..n {
        let mut var = DVector::zeros(c);
        for j in 0..c {
            if obs.labeled[r] {
                let prec = eta + 2.0 * jaakkola_lambda(state.xi.xi[(r, j)]);
                var[j] = 1.0 / prec;
                mean[(r, j)] = (obs.targets[(r, j)] - 0.5 + eta * pred[(r, j)]) * var[j];
            } else {
                var[j] = 1.0 / eta;
                mean[(r, j)] = pred[(r, j)];
            }
        }
        covs.push(DMatrix::from_diagonal(&var));
    }
    state.y = GaussianRowsQ {
        mean,
        cov: RowCovariance::PerRow(covs),
    };
    ensure_finite(&state.y, "q(Y)")
}

/// `ξ_{n,c} = sqrt(⟨y_{n,c}⟩² + Σ_{y_n,cc})`.
pub fn update_xi(state: &mut ModelState) {
    let (n, c) = state.y.mean.shape();
    for r in 0..n {
        let cov = state.y.row_cov(r);
        for j in 0..c {
            state.xi.xi[(r, j)] = (state.y.mean[(r, j)].powi(2) + cov[(j, j)]).sqrt();
        }
    }
}

pub fn update_y_xi(state: &mut ModelState, obs: &Observations) -> Result<()> {
    update_y(state, obs)?;
    update_xi(state);
    Ok(())
}

/// `q(Z)` with shared covariance `(⟨τ⟩I + ⟨η⟩⟨UᵀU⟩)⁻¹`.
pub fn update_z(state: &mut ModelState, obs: &Observations) -> Result<()> {
    let tau = state.tau.mean(0);
    let eta = state.eta.mean(0);
    let k = state.k();
    let prec = DMatrix::identity(k, k) * tau + state.u.second_moment() * eta;
    let (cov, _) = invert_precision(&prec, "q(Z)")?;
    let mut rhs = (&state.y.mean - &state.g.mean * state.vy.mean.transpose()) * &state.u.mean * eta;
    for (m, ov) in obs.views.iter().enumerate() {
        rhs += &ov.working * state.w[m].mean.transpose() * tau;
    }
    state.z = GaussianRowsQ {
        mean: rhs * &cov,
        cov: RowCovariance::Shared(cov),
    };
    ensure_finite(&state.z, "q(Z)")
}

/// `q(W⁽ᵐ⁾)`, one independent Gaussian per latent row `k`.
pub fn update_w_view(state: &mut ModelState, obs: &Observations, m: usize) -> Result<()> {
    let tau = state.tau.mean(0);
    let (n, k) = (state.n_samples(), state.k());
    let ov = &obs.views[m];
    let mut others = DMatrix::zeros(n, k);
    for (m2, ov2) in obs.views.iter().enumerate() {
        if m2 != m {
            others += &ov2.working * state.w[m2].mean.transpose();
        }
    }
    let target = &state.z.mean - others;
    let xt_target = ov.working.tr_mul(&target);
    let gamma = state.gamma[m].means();
    let phi = state.phi[m].means();
    let d = ov.working.ncols();
    let term = format!("q(W[{m}])");
    let rows = (0..k)
        .into_par_iter()
        .map(|kk| {
            let prec = &ov.gram * tau + DMatrix::from_diagonal(&(&gamma * phi[kk]));
            let (cov, _) = invert_precision(&prec, &term)?;
            let mean = &cov * xt_target.column(kk) * tau;
            Ok((mean, cov))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = DMatrix::zeros(k, d);
    let mut covs = Vec::with_capacity(k);
    for (kk, (mu, cov)) in rows.into_iter().enumerate() {
        mean.row_mut(kk).copy_from(&mu.transpose());
        covs.push(cov);
    }
    state.w[m] = GaussianRowsQ {
        mean,
        cov: RowCovariance::PerRow(covs),
    };
    ensure_finite(&state.w[m], &term)
}

pub fn update_w(state: &mut ModelState, obs: &Observations) -> Result<()> {
    for m in 0..state.n_views() {
        update_w_view(state, obs, m)?;
    }
    Ok(())
}

/// Sum of `⟨v_d v_dᵀ⟩` over the masked columns of each row of view `m`.
fn masked_loading_moments(state: &ModelState, obs: &Observations, m: usize) -> Vec<Option<DMatrix<f64>>> {
    let s = state.s();
    let v = &state.v[m];
    obs.views[m]
        .missing_by_row
        .iter()
        .map(|cols| {
            if cols.is_empty() {
                None
            } else {
                Some(cols.iter().fold(DMatrix::zeros(s, s), |acc, &d| acc + v.row_second_moment(d)))
            }
        })
        .collect()
}

/// `q(G)`. Rows with masked entries get their own covariance because their
/// reconstruction likelihood only covers observed cells; all other rows share
/// one.
pub fn update_g(state: &mut ModelState, obs: &Observations) -> Result<()> {
    let eta = state.eta.mean(0);
    let (n, s) = (state.n_samples(), state.s());
    let mut base = DMatrix::identity(s, s) + state.vy.second_moment() * eta;
    let mut rhs = (&state.y.mean - &state.z.mean * state.u.mean.transpose()) * &state.vy.mean * eta;
    for (m, ov) in obs.views.iter().enumerate() {
        let psi = state.psi[m].mean(0);
        base += state.v[m].second_moment() * psi;
        rhs += &ov.observed_only * &state.v[m].mean * psi;
    }
    let (shared, _) = invert_precision(&base, "q(G)")?;
    if !obs.has_missing() {
        state.g = GaussianRowsQ {
            mean: rhs * &shared,
            cov: RowCovariance::Shared(shared),
        };
        return ensure_finite(&state.g, "q(G)");
    }
    let masked: Vec<Vec<Option<DMatrix<f64>>>> =
        (0..state.n_views()).map(|m| masked_loading_moments(state, obs, m)).collect();
    let psis: Vec<f64> = state.psi.iter().map(|p| p.mean(0)).collect();
    let covs = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut prec: Option<DMatrix<f64>> = None;
            for (m, rows) in masked.iter().enumerate() {
                if let Some(mm) = &rows[r] {
                    let p = prec.get_or_insert_with(|| base.clone());
                    *p -= mm * psis[m];
                }
            }
            match prec {
                None => Ok(shared.clone()),
                Some(p) => invert_precision(&p, "q(G)").map(|(c, _)| c),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = DMatrix::zeros(n, s);
    for r in 0..n {
        let row = rhs.row(r) * &covs[r];
        mean.row_mut(r).copy_from(&row);
    }
    state.g = GaussianRowsQ {
        mean,
        cov: RowCovariance::PerRow(covs),
    };
    ensure_finite(&state.g, "q(G)")
}

/// `q(V⁽ᵐ⁾)`, one independent Gaussian per feature row `d`.
pub fn update_v_view(state: &mut ModelState, obs: &Observations, m: usize) -> Result<()> {
    let psi = state.psi[m].mean(0);
    let ov = &obs.views[m];
    let gg = state.g.second_moment();
    let delta = state.delta[m].means();
    let lambda = state.lambda[m].means();
    let xg = ov.observed_only.tr_mul(&state.g.mean);
    let d = ov.working.ncols();
    let s = state.s();
    let g_moments: Vec<Option<DMatrix<f64>>> = ov
        .missing_by_row
        .iter()
        .enumerate()
        .map(|(r, cols)| (!cols.is_empty()).then(|| state.g.row_second_moment(r)))
        .collect();
    let term = format!("q(V[{m}])");
    let rows = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut evidence = gg.clone();
            for &r in &ov.missing_by_col[j] {
                evidence -= g_moments[r].as_ref().expect("row with a masked cell");
            }
            let prec = DMatrix::from_diagonal(&(&delta * lambda[j])) + evidence * psi;
            let (cov, _) = invert_precision(&prec, &term)?;
            let mean = &cov * xg.row(j).transpose() * psi;
            Ok((mean, cov))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = DMatrix::zeros(d, s);
    let mut covs = Vec::with_capacity(d);
    for (j, (mu, cov)) in rows.into_iter().enumerate() {
        mean.row_mut(j).copy_from(&mu.transpose());
        covs.push(cov);
    }
    state.v[m] = GaussianRowsQ {
        mean,
        cov: RowCovariance::PerRow(covs),
    };
    ensure_finite(&state.v[m], &term)
}

pub fn update_v(state: &mut ModelState, obs: &Observations) -> Result<()> {
    for m in 0..state.n_views() {
        update_v_view(state, obs, m)?;
    }
    Ok(())
}

/// `q(U)` with shared covariance `(I + ⟨η⟩⟨ZᵀZ⟩)⁻¹`.
pub fn update_u(state: &mut ModelState) -> Result<()> {
    let eta = state.eta.mean(0);
    let k = state.k();
    let prec = DMatrix::identity(k, k) + state.z.second_moment() * eta;
    let (cov, _) = invert_precision(&prec, "q(U)")?;
    let gz = state.g.mean.tr_mul(&state.z.mean);
    let rhs = (state.y.mean.tr_mul(&state.z.mean) - &state.vy.mean * gz) * eta;
    state.u = GaussianRowsQ {
        mean: rhs * &cov,
        cov: RowCovariance::Shared(cov),
    };
    ensure_finite(&state.u, "q(U)")
}

/// `q(V^Y)`, one Gaussian per class row with ARD precision `⟨λ^Y_c⟩Λ⟨δ^Y⟩`.
pub fn update_vy(state: &mut ModelState) -> Result<()> {
    let eta = state.eta.mean(0);
    let out = state.n_views();
    let gg = state.g.second_moment();
    let delta = state.delta[out].means();
    let lambda = state.lambda[out].means();
    let zg = state.z.mean.tr_mul(&state.g.mean);
    let rhs = (state.y.mean.tr_mul(&state.g.mean) - &state.u.mean * zg) * eta;
    let (c, s) = (state.n_classes(), state.s());
    let mut mean = DMatrix::zeros(c, s);
    let mut covs = Vec::with_capacity(c);
    for j in 0..c {
        let prec = DMatrix::from_diagonal(&(&delta * lambda[j])) + &gg * eta;
        let (cov, _) = invert_precision(&prec, "q(V^Y)")?;
        let mu = &cov * rhs.row(j).transpose();
        mean.row_mut(j).copy_from(&mu.transpose());
        covs.push(cov);
    }
    state.vy = GaussianRowsQ {
        mean,
        cov: RowCovariance::PerRow(covs),
    };
    ensure_finite(&state.vy, "q(V^Y)")
}

pub fn update_u_vy(state: &mut ModelState) -> Result<()> {
    update_vy(state)?;
    update_u(state)
}

pub fn update_tau(state: &mut ModelState, obs: &Observations) -> Result<()> {
    let p = state.hyper.priors.tau;
    let n = state.n_samples() as f64;
    state.tau.shape[0] = n * state.k() as f64 / 2.0 + p.shape;
    state.tau.rate[0] = p.rate + 0.5 * task_residual(state, obs);
    ensure_gamma(&state.tau, "q(tau)")
}

pub fn update_eta(state: &mut ModelState) -> Result<()> {
    let p = state.hyper.priors.eta;
    let n = state.n_samples() as f64;
    state.eta.shape[0] = n * state.n_classes() as f64 / 2.0 + p.shape;
    state.eta.rate[0] = p.rate + 0.5 * output_residual(state);
    ensure_gamma(&state.eta, "q(eta)")
}

/// Shape counts observed cells only.
pub fn update_psi(state: &mut ModelState, obs: &Observations) -> Result<()> {
    let p = state.hyper.priors.psi;
    for m in 0..state.n_views() {
        let residual = view_residual(state, obs, m);
        state.psi[m].shape[0] = obs.views[m].n_observed as f64 / 2.0 + p.shape;
        state.psi[m].rate[0] = p.rate + 0.5 * residual;
        ensure_gamma(&state.psi[m], &format!("q(psi[{m}])"))?;
    }
    Ok(())
}

pub fn update_noise(state: &mut ModelState, obs: &Observations) -> Result<()> {
    update_tau(state, obs)?;
    update_eta(state)?;
    update_psi(state, obs)
}

/// Row-wise ARD precisions (`φ` over latent rows of `W⁽ᵐ⁾`).
pub fn update_phi(state: &mut ModelState, m: usize) -> Result<()> {
    let p = state.hyper.priors.phi;
    let w2 = state.w[m].squared_means();
    let rate = (&w2 * state.gamma[m].means()) * 0.5;
    let d = w2.ncols() as f64;
    let q = &mut state.phi[m];
    q.shape.fill(d / 2.0 + p.shape);
    q.rate = rate.add_scalar(p.rate);
    ensure_gamma(q, &format!("q(phi[{m}])"))
}

/// Feature-wise ARD precisions (`γ` over columns of `W⁽ᵐ⁾`).
pub fn update_gamma(state: &mut ModelState, m: usize) -> Result<()> {
    let p = state.hyper.priors.gamma;
    let w2 = state.w[m].squared_means();
    let rate = (w2.tr_mul(&state.phi[m].means())) * 0.5;
    let k = w2.nrows() as f64;
    let q = &mut state.gamma[m];
    q.shape.fill(k / 2.0 + p.shape);
    q.rate = rate.add_scalar(p.rate);
    ensure_gamma(q, &format!("q(gamma[{m}])"))
}

fn loadings(state: &ModelState, m: usize) -> &GaussianRowsQ {
    if m < state.n_views() {
        &state.v[m]
    } else {
        &state.vy
    }
}

/// Latent-dimension ARD precisions (`δ`); `m == M` is the output view.
pub fn update_delta(state: &mut ModelState, m: usize) -> Result<()> {
    let out = m == state.n_views();
    let p = if out { state.hyper.priors.delta_y } else { state.hyper.priors.delta };
    let v2 = loadings(state, m).squared_means();
    let rate = (v2.tr_mul(&state.lambda[m].means())) * 0.5;
    let rows = v2.nrows() as f64;
    let q = &mut state.delta[m];
    q.shape.fill(rows / 2.0 + p.shape);
    q.rate = rate.add_scalar(p.rate);
    ensure_gamma(q, &format!("q(delta[{m}])"))
}

/// Feature-wise ARD precisions (`λ`); `m == M` is the output view.
pub fn update_lambda(state: &mut ModelState, m: usize) -> Result<()> {
    let out = m == state.n_views();
    let p = if out { state.hyper.priors.lambda_y } else { state.hyper.priors.lambda };
    let v2 = loadings(state, m).squared_means();
    let rate = (&v2 * state.delta[m].means()) * 0.5;
    let s = v2.ncols() as f64;
    let q = &mut state.lambda[m];
    q.shape.fill(s / 2.0 + p.shape);
    q.rate = rate.add_scalar(p.rate);
    ensure_gamma(q, &format!("q(lambda[{m}])"))
}

pub fn update_ard(state: &mut ModelState) -> Result<()> {
    for m in 0..state.n_views() {
        update_phi(state, m)?;
        update_gamma(state, m)?;
    }
    for m in 0..=state.n_views() {
        update_delta(state, m)?;
        update_lambda(state, m)?;
    }
    Ok(())
}
