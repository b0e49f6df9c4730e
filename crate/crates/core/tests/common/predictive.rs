//! Monte-Carlo oracle for the predictive moments.

use super::*;
use dualvb::data::MultiViewDataset;
use dualvb::predict::{predictive_moments, project_latents, LatentSpaces, Projection};
use dualvb::state::ModelState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fitted() -> (MultiViewDataset, ModelState) {
    let ds = tiny_dataset(21, 40, &[4, 3], 3, 0.1);
    let mut hp = tiny_hp(3, 2, 3);
    hp.refresh_imputations = true;
    let (st, _) = warm_state(&ds, &hp, 30);
    (ds, st)
}

/// Largest `|MC − closed form| / SE` over the predictive means and
/// variances of a few rows, for both projections and all latent spaces.
pub fn worst_moment_zscore(draws: usize) -> f64 {
    let (ds, st) = fitted();
    let rows = [0usize, 5, 17];
    let inductive = ds.select_rows(&rows).unwrap();
    let mut worst = 0.0f64;
    for proj in [
        project_latents(&st, Projection::Transductive(&rows)).unwrap(),
        project_latents(&st, Projection::Inductive(&inductive)).unwrap(),
    ] {
        for spaces in [LatentSpaces::Zg, LatentSpaces::Z, LatentSpaces::G] {
            let (mean, var) = predictive_moments(&st, &proj, spaces);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let noise_sd = (1.0 / st.eta.mean(0)).sqrt();
            let lz: Vec<_> = proj.z_cov.iter().map(cholesky_factor).collect();
            let lg: Vec<_> = proj.g_cov.iter().map(cholesky_factor).collect();
            let lu: Vec<_> = (0..st.n_classes()).map(|c| cholesky_factor(st.u.row_cov(c))).collect();
            let lv: Vec<_> = (0..st.n_classes()).map(|c| cholesky_factor(st.vy.row_cov(c))).collect();
            for r in 0..rows.len() {
                for c in 0..st.n_classes() {
                    let samples: Vec<f64> = (0..draws)
                        .map(|_| {
                            let mut y = noise_sd * rng.sample::<f64, _>(StandardNormal);
                            if spaces != LatentSpaces::G {
                                let z = proj.z.row(r).transpose() + &lz[r] * std_normal_vec(&mut rng, st.k());
                                let u = st.u.row_mean(c) + &lu[c] * std_normal_vec(&mut rng, st.k());
                                y += z.dot(&u);
                            }
                            if spaces != LatentSpaces::Z {
                                let g = proj.g.row(r).transpose() + &lg[r] * std_normal_vec(&mut rng, st.s());
                                let v = st.vy.row_mean(c) + &lv[c] * std_normal_vec(&mut rng, st.s());
                                y += g.dot(&v);
                            }
                            y
                        })
                        .collect();
                    let (m, se_m) = mean_se(&samples);
                    let sq: Vec<f64> = samples.iter().map(|y| (y - m).powi(2)).collect();
                    let (v, se_v) = mean_se(&sq);
                    worst = worst.max((m - mean[(r, c)]).abs() / se_m);
                    worst = worst.max((v - var[(r, c)]).abs() / se_v);
                }
            }
        }
    }
    worst
}
