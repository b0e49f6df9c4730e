//! Perturbation oracle: a freshly updated factor should be a coordinate
//! maximum of the bound.

use super::*;
use dualvb::inference::{compute_elbo, updates, Observations};
use dualvb::state::{GammaQ, GaussianRowsQ, ModelState, RowCovariance};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SCALE: f64 = 1e-3;
pub const PERTURBATIONS: usize = 200;
pub const REL_TOL: f64 = 1e-8;

fn jiggle_cov(c: &DMatrix<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
    let q = c.nrows();
    let a = DMatrix::from_fn(q, q, |_, _| SCALE * rng.sample::<f64, _>(StandardNormal)) + DMatrix::identity(q, q);
    &a * c * a.transpose()
}

fn jiggle_gaussian(q: &GaussianRowsQ, rng: &mut impl Rng) -> GaussianRowsQ {
    let mean = q.mean.map(|x| x + SCALE * rng.sample::<f64, _>(StandardNormal));
    let cov = match &q.cov {
        RowCovariance::Shared(c) => RowCovariance::Shared(jiggle_cov(c, rng)),
        RowCovariance::PerRow(v) => RowCovariance::PerRow(v.iter().map(|c| jiggle_cov(c, rng)).collect()),
    };
    GaussianRowsQ { mean, cov }
}

fn jiggle_gamma(q: &GammaQ, rng: &mut impl Rng) -> GammaQ {
    let f = |x: f64, rng: &mut dyn rand::RngCore| x * (SCALE * rng.sample::<f64, _>(StandardNormal)).exp();
    GammaQ {
        shape: q.shape.map(|x| f(x, rng)),
        rate: q.rate.map(|x| f(x, rng)),
    }
}

/// Which factor a perturbation touches.
#[derive(Clone, Copy, Debug)]
pub enum Factor {
    Y,
    Xi,
    Z,
    W(usize),
    G,
    V(usize),
    U,
    Vy,
    Tau,
    Eta,
    Psi(usize),
    Phi(usize),
    Gamma(usize),
    Delta(usize),
    Lambda(usize),
}

pub fn perturb(st: &ModelState, f: Factor, rng: &mut impl Rng) -> ModelState {
    let mut p = st.clone();
    match f {
        Factor::Y => p.y = jiggle_gaussian(&st.y, rng),
        Factor::Xi => p.xi.xi = st.xi.xi.map(|x| x * (SCALE * rng.sample::<f64, _>(StandardNormal)).exp()),
        Factor::Z => p.z = jiggle_gaussian(&st.z, rng),
        Factor::W(m) => p.w[m] = jiggle_gaussian(&st.w[m], rng),
        Factor::G => p.g = jiggle_gaussian(&st.g, rng),
        Factor::V(m) => p.v[m] = jiggle_gaussian(&st.v[m], rng),
        Factor::U => p.u = jiggle_gaussian(&st.u, rng),
        Factor::Vy => p.vy = jiggle_gaussian(&st.vy, rng),
        Factor::Tau => p.tau = jiggle_gamma(&st.tau, rng),
        Factor::Eta => p.eta = jiggle_gamma(&st.eta, rng),
        Factor::Psi(m) => p.psi[m] = jiggle_gamma(&st.psi[m], rng),
        Factor::Phi(m) => p.phi[m] = jiggle_gamma(&st.phi[m], rng),
        Factor::Gamma(m) => p.gamma[m] = jiggle_gamma(&st.gamma[m], rng),
        Factor::Delta(m) => p.delta[m] = jiggle_gamma(&st.delta[m], rng),
        Factor::Lambda(m) => p.lambda[m] = jiggle_gamma(&st.lambda[m], rng),
    }
    p
}

/// Largest bound gain over random perturbations of each factor, relative
/// to `|L|`.
pub fn worst_relative_gain(st: &ModelState, obs: &Observations, factors: &[Factor], rng: &mut impl Rng) -> f64 {
    let base = compute_elbo(st, obs).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for &f in factors {
        for _ in 0..PERTURBATIONS {
            let gain = compute_elbo(&perturb(st, f, rng), obs).unwrap() - base;
            worst = worst.max(gain / base.abs());
        }
    }
    worst
}

/// Five small instances, two of them with masked cells and one with three
/// classes.
pub fn instances() -> Vec<(ModelState, Observations)> {
    let specs: [(u64, usize, &[usize], usize, f64, usize); 5] = [
        (1, 8, &[3, 2], 2, 0.0, 1),
        (2, 6, &[4], 2, 0.0, 1),
        (3, 9, &[2, 3], 3, 0.0, 2),
        (4, 8, &[3, 3], 2, 0.2, 1),
        (5, 7, &[4, 2], 3, 0.25, 2),
    ];
    specs
        .iter()
        .map(|&(seed, n, dims, c, miss, k)| {
            let ds = tiny_dataset(seed, n, dims, c, miss);
            warm_state(&ds, &tiny_hp(seed, k, 3), 4)
        })
        .collect()
}

pub const BLOCKS: [&str; 8] = [
    "labels_and_bound_centres",
    "task_latents",
    "task_weights",
    "generative_latents",
    "generative_loadings",
    "output_loadings",
    "noise_precisions",
    "ard_precisions",
];

/// Applies one update block to every instance, probing each freshly updated
/// factor; returns the worst relative gain seen.
pub fn probe_block(name: &str) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (i, (mut st, obs)) in instances().into_iter().enumerate() {
        let rng = &mut ChaCha8Rng::seed_from_u64(100 + i as u64);
        let st = &mut st;
        let obs = &obs;
        let mut probe = |st: &ModelState, f: &[Factor], rng: &mut ChaCha8Rng| {
            worst = worst.max(worst_relative_gain(st, obs, f, rng));
        };
        match name {
            "labels_and_bound_centres" => {
                updates::update_y(st, obs).unwrap();
                probe(st, &[Factor::Y], rng);
                updates::update_xi(st);
                probe(st, &[Factor::Xi], rng);
            }
            "task_latents" => {
                updates::update_z(st, obs).unwrap();
                probe(st, &[Factor::Z], rng);
            }
            "task_weights" => {
                for m in 0..st.n_views() {
                    updates::update_w_view(st, obs, m).unwrap();
                    probe(st, &[Factor::W(m)], rng);
                }
            }
            "generative_latents" => {
                updates::update_g(st, obs).unwrap();
                probe(st, &[Factor::G], rng);
            }
            "generative_loadings" => {
                for m in 0..st.n_views() {
                    updates::update_v_view(st, obs, m).unwrap();
                    probe(st, &[Factor::V(m)], rng);
                }
            }
            "output_loadings" => {
                updates::update_vy(st).unwrap();
                probe(st, &[Factor::Vy], rng);
                updates::update_u(st).unwrap();
                probe(st, &[Factor::U], rng);
            }
            "noise_precisions" => {
                updates::update_noise(st, obs).unwrap();
                let mut f = vec![Factor::Tau, Factor::Eta];
                f.extend((0..st.n_views()).map(Factor::Psi));
                probe(st, &f, rng);
            }
            "ard_precisions" => {
                for m in 0..st.n_views() {
                    updates::update_phi(st, m).unwrap();
                    probe(st, &[Factor::Phi(m)], rng);
                    updates::update_gamma(st, m).unwrap();
                    probe(st, &[Factor::Gamma(m)], rng);
                }
                for m in 0..=st.n_views() {
                    updates::update_delta(st, m).unwrap();
                    probe(st, &[Factor::Delta(m)], rng);
                    updates::update_lambda(st, m).unwrap();
                    probe(st, &[Factor::Lambda(m)], rng);
                }
            }
            other => panic!("unknown block {other}"),
        }
    }
    worst
}
