//! Monte-Carlo estimate of `E_q[ln p(Θ, t, X)] − E_q[ln q(Θ)]` with the
//! bounded label likelihood, for single-view models.

use super::*;
use dualvb::data::{LabelMatrix, MultiViewDataset, ViewMatrix};
use dualvb::inference::{compute_elbo, Observations};
use dualvb::state::{GammaPrior, GammaQ, GaussianRowsQ, ModelState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use statrs::function::gamma::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn ln_normal(x: f64, mean: f64, prec: f64) -> f64 {
    0.5 * (prec.ln() - LN_2PI) - 0.5 * prec * (x - mean).powi(2)
}

fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ln_h(y: f64, xi: f64, t: f64) -> f64 {
    let lam = if xi.abs() < 1e-8 { 0.125 } else { (sigmoid(xi) - 0.5) / (2.0 * xi) };
    y * t - 0.5 * (y + xi) + sigmoid(xi).ln() - lam * (y * y - xi * xi)
}

/// Draw of a row-factorized Gaussian plus its log density.
struct RowSampler {
    mean: DMatrix<f64>,
    chol: Vec<DMatrix<f64>>,
    ln_norm: Vec<f64>,
}

impl RowSampler {
    fn new(q: &GaussianRowsQ) -> Self {
        let dim = q.dim() as f64;
        let chol: Vec<_> = (0..q.nrows()).map(|r| cholesky_factor(q.row_cov(r))).collect();
        let ln_norm = chol
            .iter()
            .map(|l| -0.5 * dim * LN_2PI - l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
            .collect();
        Self {
            mean: q.mean.clone(),
            chol,
            ln_norm,
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> (DMatrix<f64>, f64) {
        let mut out = self.mean.clone();
        let mut lq = 0.0;
        for r in 0..out.nrows() {
            let e = std_normal_vec(rng, out.ncols());
            let x = &self.chol[r] * &e;
            for j in 0..out.ncols() {
                out[(r, j)] += x[j];
            }
            lq += self.ln_norm[r] - 0.5 * e.norm_squared();
        }
        (out, lq)
    }
}

struct GammaSampler {
    q: GammaQ,
    dists: Vec<Gamma<f64>>,
}

impl GammaSampler {
    fn new(q: &GammaQ) -> Self {
        let dists = (0..q.len()).map(|i| Gamma::new(q.shape[i], 1.0 / q.rate[i]).unwrap()).collect();
        Self { q: q.clone(), dists }
    }

    fn draw(&self, rng: &mut impl Rng, prior: GammaPrior) -> (DVector<f64>, f64, f64) {
        let x = DVector::from_fn(self.q.len(), |i, _| rng.sample(self.dists[i]));
        let lq = (0..x.len()).map(|i| ln_gamma_pdf(x[i], self.q.shape[i], self.q.rate[i])).sum();
        let lp = x.iter().map(|&v| ln_gamma_pdf(v, prior.shape, prior.rate)).sum();
        (x, lq, lp)
    }
}

fn ard_ln_prior(w: &DMatrix<f64>, rows: &DVector<f64>, cols: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for r in 0..w.nrows() {
        for c in 0..w.ncols() {
            s += ln_normal(w[(r, c)], 0.0, rows[r] * cols[c]);
        }
    }
    s
}

/// One joint draw from q: `ln p − ln q`. Single-view models only.
fn log_ratio_sample(st: &ModelState, obs: &Observations, s: &Samplers, rng: &mut impl Rng) -> f64 {
    let p = &st.hyper.priors;
    let (z, lq_z) = s.z.draw(rng);
    let (g, lq_g) = s.g.draw(rng);
    let (y, lq_y) = s.y.draw(rng);
    let (w, lq_w) = s.w.draw(rng);
    let (v, lq_v) = s.v.draw(rng);
    let (u, lq_u) = s.u.draw(rng);
    let (vy, lq_vy) = s.vy.draw(rng);
    let (tau, q1, p1) = s.tau.draw(rng, p.tau);
    let (eta, q2, p2) = s.eta.draw(rng, p.eta);
    let (psi, q3, p3) = s.psi.draw(rng, p.psi);
    let (phi, q4, p4) = s.phi.draw(rng, p.phi);
    let (gam, q5, p5) = s.gamma.draw(rng, p.gamma);
    let (del, q6, p6) = s.delta.draw(rng, p.delta);
    let (lam, q7, p7) = s.lambda.draw(rng, p.lambda);
    let (dely, q8, p8) = s.delta_y.draw(rng, p.delta_y);
    let (lamy, q9, p9) = s.lambda_y.draw(rng, p.lambda_y);
    let ln_q = lq_z + lq_g + lq_y + lq_w + lq_v + lq_u + lq_vy + q1 + q2 + q3 + q4 + q5 + q6 + q7 + q8 + q9;
    let mut ln_p = p1 + p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;

    let ov = &obs.views[0];
    let recon = &g * v.transpose();
    for n in 0..recon.nrows() {
        for d in 0..recon.ncols() {
            if ov.observed[(n, d)] {
                ln_p += ln_normal(ov.observed_only[(n, d)], recon[(n, d)], psi[0]);
            }
        }
    }
    let zpred = &ov.working * w.transpose();
    ln_p += z.zip_fold(&zpred, 0.0, |acc, a, b| acc + ln_normal(a, b, tau[0]));
    let ypred = &z * u.transpose() + &g * vy.transpose();
    ln_p += y.zip_fold(&ypred, 0.0, |acc, a, b| acc + ln_normal(a, b, eta[0]));
    for n in 0..y.nrows() {
        if obs.labeled[n] {
            for c in 0..y.ncols() {
                ln_p += ln_h(y[(n, c)], st.xi.xi[(n, c)], obs.targets[(n, c)]);
            }
        }
    }
    ln_p += g.iter().chain(u.iter()).map(|&x| ln_normal(x, 0.0, 1.0)).sum::<f64>();
    ln_p += ard_ln_prior(&w, &phi, &gam) + ard_ln_prior(&v, &lam, &del) + ard_ln_prior(&vy, &lamy, &dely);
    ln_p - ln_q
}

struct Samplers {
    z: RowSampler,
    g: RowSampler,
    y: RowSampler,
    w: RowSampler,
    v: RowSampler,
    u: RowSampler,
    vy: RowSampler,
    tau: GammaSampler,
    eta: GammaSampler,
    psi: GammaSampler,
    phi: GammaSampler,
    gamma: GammaSampler,
    delta: GammaSampler,
    lambda: GammaSampler,
    delta_y: GammaSampler,
    lambda_y: GammaSampler,
}

/// Closed-form bound, MC mean and MC standard error after a few warm sweeps.
pub fn monte_carlo_gap(ds: &MultiViewDataset, seed: u64, draws: usize) -> (f64, f64, f64) {
    let hp = tiny_hp(seed, 1, 2);
    let (st, obs) = warm_state(ds, &hp, 6);
    let closed = compute_elbo(&st, &obs).unwrap();
    let s = Samplers {
        z: RowSampler::new(&st.z),
        g: RowSampler::new(&st.g),
        y: RowSampler::new(&st.y),
        w: RowSampler::new(&st.w[0]),
        v: RowSampler::new(&st.v[0]),
        u: RowSampler::new(&st.u),
        vy: RowSampler::new(&st.vy),
        tau: GammaSampler::new(&st.tau),
        eta: GammaSampler::new(&st.eta),
        psi: GammaSampler::new(&st.psi[0]),
        phi: GammaSampler::new(&st.phi[0]),
        gamma: GammaSampler::new(&st.gamma[0]),
        delta: GammaSampler::new(&st.delta[0]),
        lambda: GammaSampler::new(&st.lambda[0]),
        delta_y: GammaSampler::new(&st.delta[1]),
        lambda_y: GammaSampler::new(&st.lambda[1]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws).map(|_| log_ratio_sample(&st, &obs, &s, &mut rng)).collect();
    let (mc, se) = mean_se(&samples);
    (closed, mc, se)
}

pub fn three_by_two(mask: Option<(usize, usize)>) -> MultiViewDataset {
    let x = DMatrix::from_row_slice(3, 2, &[0.8, -0.4, -1.1, 0.9, 0.3, 0.6]);
    let mut observed = DMatrix::from_element(3, 2, true);
    if let Some(cell) = mask {
        observed[cell] = false;
    }
    let view = ViewMatrix::new("x", vec!["a".into(), "b".into()], x, observed).unwrap();
    let labels = LabelMatrix::from_indices(&[Some(1), Some(0), None], vec!["n".into(), "p".into()]).unwrap();
    MultiViewDataset::new(vec![view], labels).unwrap()
}
