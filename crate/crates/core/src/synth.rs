//! Forward sampling from the generative model with known ground truth.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{apply_mcar_mask, LabelMatrix, MultiViewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMechanism {
    /// One-hot label at the largest output of each row.
    #[default]
    Argmax,
    /// Independent `t_c ~ Bernoulli(σ(y_c))` per class.
    PerClassBernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub view_dims: Vec<usize>,
    pub s: usize,
    pub k: usize,
    pub c: usize,
    /// Noise precision of every view.
    pub psi: f64,
    pub tau: f64,
    pub eta: f64,
    /// Fraction of nonzero entries in each generative loading matrix.
    pub loading_density: f64,
    /// Per-view multiplier on the generative loadings (empty means all 1).
    /// A zero makes that view pure noise as far as G is concerned.
    pub view_loading_scale: Vec<f64>,
    /// Fraction of nonzero entries in each task weight matrix.
    pub weight_density: f64,
    pub weight_scale: f64,
    /// Scale of the task-to-output loadings.
    pub task_loading_scale: f64,
    /// Scale of the generative-to-output loadings; 0 makes labels depend on Z only.
    pub output_loading_scale: f64,
    /// Project task weights onto the orthogonal complement of each view's
    /// loading span, so Z carries only structure G does not explain.
    pub decouple: bool,
    pub label_mechanism: LabelMechanism,
    /// Optional MCAR masking applied after sampling.
    pub missing_rate: f64,
    pub seed: u64,
    pub mask_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 200,
            view_dims: vec![10, 10],
            s: 3,
            k: 1,
            c: 2,
            psi: 10.0,
            tau: 10.0,
            eta: 10.0,
            loading_density: 1.0,
            view_loading_scale: Vec::new(),
            weight_density: 1.0,
            weight_scale: 0.3,
            task_loading_scale: 1.0,
            output_loading_scale: 1.0,
            decouple: false,
            label_mechanism: LabelMechanism::Argmax,
            missing_rate: 0.0,
            seed: 0,
            mask_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [self.n, self.s, self.k, self.c, self.view_dims.len()];
        if sizes.contains(&0) || self.view_dims.contains(&0) {
            return Err(Error::Config("synthetic sizes must all be at least 1".into()));
        }
        for (name, p) in [("psi", self.psi), ("tau", self.tau), ("eta", self.eta)] {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive finite precision")));
            }
        }
        for (name, p) in [("loading_density", self.loading_density), ("weight_density", self.weight_density)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !self.view_loading_scale.is_empty() && self.view_loading_scale.len() != self.view_dims.len() {
            return Err(Error::Config("view_loading_scale needs one entry per view".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// The sampled latent variables and parameters behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub g: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub v: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub u: DMatrix<f64>,
    pub vy: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Sampled binary outcomes per class.
    pub t: DMatrix<f64>,
    /// Noise-free views before masking.
    pub x: Vec<DMatrix<f64>>,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn normal_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn sparsify(rng: &mut impl Rng, m: &mut DMatrix<f64>, density: f64) {
    if density < 1.0 {
        for x in m.iter_mut() {
            if !rng.random_bool(density) {
                *x = 0.0;
            }
        }
    }
}

/// Samples a dataset with `G ~ N(0, I)`, `X⁽ᵐ⁾ = G V⁽ᵐ⁾ᵀ + noise`,
/// `Z = Σ_m X⁽ᵐ⁾ W⁽ᵐ⁾ᵀ + noise`, `Y = Z Uᵀ + G V^Yᵀ + noise`, then labels.
///
/// Under the Bernoulli mechanism a row's dataset label is the class with
/// the largest output among those drawn as 1 (among all classes if none
/// was drawn); the raw draws are kept in [`GroundTruth::t`].
pub fn generate(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<(MultiViewDataset, GroundTruth)> {
    cfg.validate()?;
    let (n, s, k, c) = (cfg.n, cfg.s, cfg.k, cfg.c);
    let g = normal_matrix(rng, n, s, 1.0);
    let mut v = Vec::new();
    let mut x_clean = Vec::new();
    let mut x = Vec::new();
    for (m, &d) in cfg.view_dims.iter().enumerate() {
        let scale = cfg.view_loading_scale.get(m).copied().unwrap_or(1.0);
        let mut vm = normal_matrix(rng, d, s, scale);
        sparsify(rng, &mut vm, cfg.loading_density);
        let clean = &g * vm.transpose();
        let noisy = &clean + normal_matrix(rng, n, d, cfg.psi.powf(-0.5));
        v.push(vm);
        x_clean.push(clean);
        x.push(noisy);
    }
    let mut w = Vec::new();
    let mut z = normal_matrix(rng, n, k, cfg.tau.powf(-0.5));
    for (m, &d) in cfg.view_dims.iter().enumerate() {
        let mut wm = normal_matrix(rng, k, d, cfg.weight_scale);
        sparsify(rng, &mut wm, cfg.weight_density);
        if cfg.decouple && v[m].iter().any(|&x| x != 0.0) {
            if d > s {
                let q = v[m].clone().qr().q();
                let proj = DMatrix::identity(d, d) - &q * q.transpose();
                wm = &wm * proj;
            } else {
                warn!("view {m} has no more features than latent dimensions; weights left coupled");
            }
        }
        z += &x[m] * wm.transpose();
        w.push(wm);
    }
    let u = normal_matrix(rng, c, k, cfg.task_loading_scale);
    let vy = normal_matrix(rng, c, s, cfg.output_loading_scale);
    let y = &z * u.transpose() + &g * vy.transpose() + normal_matrix(rng, n, c, cfg.eta.powf(-0.5));

    let argmax = |row: &[f64], allowed: &dyn Fn(usize) -> bool| -> usize {
        let mut best: Option<usize> = None;
        for (j, &val) in row.iter().enumerate() {
            if allowed(j) && best.is_none_or(|b| val > row[b]) {
                best = Some(j);
            }
        }
        best.unwrap_or(0)
    };
    let mut t = DMatrix::zeros(n, c);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let row: Vec<f64> = y.row(r).iter().cloned().collect();
        match cfg.label_mechanism {
            LabelMechanism::Argmax => {
                let j = argmax(&row, &|_| true);
                t[(r, j)] = 1.0;
                labels.push(Some(j));
            }
            LabelMechanism::PerClassBernoulli => {
                for j in 0..c {
                    if rng.random_bool(sigmoid(row[j])) {
                        t[(r, j)] = 1.0;
                    }
                }
                let any = t.row(r).sum() > 0.0;
                let tr = t.row(r).clone_owned();
                labels.push(Some(argmax(&row, &|j| !any || tr[j] == 1.0)));
            }
        }
    }

    let views = x
        .iter()
        .enumerate()
        .map(|(m, xm)| {
            let names = (0..xm.ncols()).map(|d| format!("f{d}")).collect();
            ViewMatrix::new(
                format!("view{m}"),
                names,
                xm.clone(),
                DMatrix::from_element(n, xm.ncols(), true),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let classes = (0..c).map(|j| format!("c{j}")).collect();
    let mut ds = MultiViewDataset::new(views, LabelMatrix::from_indices(&labels, classes)?)?;
    if cfg.missing_rate > 0.0 {
        ds = apply_mcar_mask(&ds, cfg.missing_rate, cfg.mask_seed)?;
    }
    let truth = GroundTruth {
        g,
        z,
        v,
        w,
        u,
        vy,
        y,
        t,
        x: x_clean,
    };
    Ok((ds, truth))
}

/// [`generate`] with a ChaCha8 stream seeded from `cfg.seed`.
pub fn generate_seeded(cfg: &SynthConfig) -> Result<(MultiViewDataset, GroundTruth)> {
    generate(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}
