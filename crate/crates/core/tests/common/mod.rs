#![allow(dead_code)]

pub mod coordinate;
pub mod mc_elbo;
pub mod predictive;
pub mod shapes;

use dualvb::data::{apply_mcar_mask, MultiViewDataset};
use dualvb::inference::{self, Observations};
use dualvb::state::{init_state, Hyperparams, ModelState};
use dualvb::synth::{generate_seeded, SynthConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Small synthetic problem with some unlabeled rows.
pub fn tiny_dataset(seed: u64, n: usize, dims: &[usize], c: usize, missing: f64) -> MultiViewDataset {
    let cfg = SynthConfig {
        n,
        view_dims: dims.to_vec(),
        s: 2,
        k: 1,
        c,
        psi: 4.0,
        seed,
        ..Default::default()
    };
    let (ds, _) = generate_seeded(&cfg).unwrap();
    let hidden: Vec<usize> = (0..n).filter(|r| r % 4 == 3).collect();
    let ds = ds.mask_labels(&hidden);
    if missing > 0.0 {
        apply_mcar_mask(&ds, missing, seed + 1000).unwrap()
    } else {
        ds
    }
}

pub fn tiny_hp(seed: u64, k: usize, s: usize) -> Hyperparams {
    Hyperparams {
        k: Some(k),
        s,
        seed,
        prune_every: 0,
        refresh_imputations: false,
        ..Default::default()
    }
}

/// A state after `sweeps` coordinate-ascent sweeps, with imputations frozen.
pub fn warm_state(ds: &MultiViewDataset, hp: &Hyperparams, sweeps: usize) -> (ModelState, Observations) {
    let mut st = init_state(ds, hp).unwrap();
    let mut obs = Observations::new(ds);
    for i in 1..=sweeps {
        inference::sweep(&mut st, &mut obs, hp, i).unwrap();
    }
    (st, obs)
}

pub fn cholesky_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    cov.clone().cholesky().expect("covariance must be SPD").l()
}

pub fn std_normal_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
