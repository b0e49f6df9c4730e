//! Hyperparameters and the full set of variational factors.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::math::{digamma, is_spd, ln_gamma, logdet_spd, LN_2PI};

/// Shape/rate pair of a Gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }
}

/// Priors for every precision and ARD family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaPriors {
    pub tau: GammaPrior,
    pub eta: GammaPrior,
    pub psi: GammaPrior,
    pub phi: GammaPrior,
    pub gamma: GammaPrior,
    pub delta: GammaPrior,
    pub lambda: GammaPrior,
    pub delta_y: GammaPrior,
    pub lambda_y: GammaPrior,
}

impl Default for GammaPriors {
    fn default() -> Self {
        let noise = GammaPrior::new(1e-3, 1e-3);
        let ard = GammaPrior::new(1.0, 1.0);
        Self {
            tau: noise,
            eta: noise,
            psi: noise,
            phi: ard,
            gamma: ard,
            delta: ard,
            lambda: ard,
            delta_y: ard,
            lambda_y: ard,
        }
    }
}

impl GammaPriors {
    fn all(&self) -> [(&'static str, GammaPrior); 9] {
        [
            ("tau", self.tau),
            ("eta", self.eta),
            ("psi", self.psi),
            ("phi", self.phi),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("lambda", self.lambda),
            ("delta_y", self.delta_y),
            ("lambda_y", self.lambda_y),
        ]
    }
}

/// How the windowed convergence test compares lower-bound values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConvergenceRule {
    /// `|L[k-window] - L[k]| < eps`
    #[default]
    Absolute,
    /// `|L[k-window] - L[k]| < eps · |L[k]|`
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Task-oriented latent size; `None` means `max(C - 1, 1)`.
    pub k: Option<usize>,
    /// Initial generative latent size.
    pub s: usize,
    pub priors: GammaPriors,
    pub convergence_eps: f64,
    pub convergence_rule: ConvergenceRule,
    pub max_iters: usize,
    pub convergence_window: usize,
    /// Prune generative dimensions every this many sweeps; 0 disables.
    pub prune_every: usize,
    pub prune_rel_threshold: f64,
    /// Refresh the working values of masked cells once per sweep.
    pub refresh_imputations: bool,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: None,
            s: 100,
            priors: GammaPriors::default(),
            convergence_eps: 1e-4,
            convergence_rule: ConvergenceRule::Absolute,
            max_iters: 2000,
            convergence_window: 100,
            prune_every: 10,
            prune_rel_threshold: 1e-2,
            refresh_imputations: true,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.s == 0 {
            return Err(Error::Config("S must be at least 1".into()));
        }
        for (name, p) in self.priors.all() {
            if !(p.shape > 0.0 && p.rate > 0.0 && p.shape.is_finite() && p.rate.is_finite()) {
                return Err(Error::Config(format!(
                    "prior for {name} needs positive finite shape and rate, got ({}, {})",
                    p.shape, p.rate
                )));
            }
        }
        if self.convergence_eps.is_nan() || self.convergence_eps <= 0.0 {
            return Err(Error::Config("convergence_eps must be positive".into()));
        }
        if self.max_iters == 0 || self.convergence_window == 0 {
            return Err(Error::Config("max_iters and convergence_window must be positive".into()));
        }
        if !(self.prune_rel_threshold >= 0.0 && self.prune_rel_threshold < 1.0) {
            return Err(Error::Config("prune_rel_threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// K for a problem with `c` classes.
    pub fn resolve_k(&self, c: usize) -> usize {
        let default = c.saturating_sub(1).max(1);
        match self.k {
            None => default,
            Some(k) => {
                if k > default {
                    warn!("K = {k} exceeds C - 1 = {default}; keeping the override");
                }
                k
            }
        }
    }
}

/// Covariance layout of a [`GaussianRowsQ`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RowCovariance {
    /// One covariance for every row.
    Shared(DMatrix<f64>),
    /// One covariance per row.
    PerRow(Vec<DMatrix<f64>>),
}

/// Independent Gaussian rows: row `r` is `N(mean[r, :], cov_r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianRowsQ {
    pub mean: DMatrix<f64>,
    pub cov: RowCovariance,
}

impl GaussianRowsQ {
    pub fn with_identity(mean: DMatrix<f64>) -> Self {
        let q = mean.ncols();
        Self {
            mean,
            cov: RowCovariance::Shared(DMatrix::identity(q, q)),
        }
    }

    pub fn nrows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn row_cov(&self, r: usize) -> &DMatrix<f64> {
        match &self.cov {
            RowCovariance::Shared(c) => c,
            RowCovariance::PerRow(v) => &v[r],
        }
    }

    /// Row `r` of the mean as a column vector.
    pub fn row_mean(&self, r: usize) -> DVector<f64> {
        self.mean.row(r).transpose()
    }

    /// `Σ_r cov_r`.
    pub fn sum_cov(&self) -> DMatrix<f64> {
        match &self.cov {
            RowCovariance::Shared(c) => c * self.nrows() as f64,
            RowCovariance::PerRow(v) => {
                let q = self.dim();
                v.iter().fold(DMatrix::zeros(q, q), |acc, c| acc + c)
            }
        }
    }

    /// `E[XᵀX] = meanᵀ mean + Σ_r cov_r` (a `Q × Q` matrix).
    pub fn second_moment(&self) -> DMatrix<f64> {
        self.mean.tr_mul(&self.mean) + self.sum_cov()
    }

    /// `E[x_r x_rᵀ]` for a single row.
    pub fn row_second_moment(&self, r: usize) -> DMatrix<f64> {
        let m = self.row_mean(r);
        &m * m.transpose() + self.row_cov(r)
    }

    /// Elementwise `E[x_{rq}²]`.
    pub fn squared_means(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.dim(), |r, q| {
            self.mean[(r, q)].powi(2) + self.row_cov(r)[(q, q)]
        })
    }

    /// Differential entropy of the whole factor.
    pub fn entropy(&self, term: &str) -> Result<f64> {
        let q = self.dim() as f64;
        let base = 0.5 * q * (1.0 + LN_2PI);
        match &self.cov {
            RowCovariance::Shared(c) => {
                Ok(self.nrows() as f64 * (base + 0.5 * logdet_spd(c, term)?))
            }
            RowCovariance::PerRow(v) => v
                .iter()
                .map(|c| Ok(base + 0.5 * logdet_spd(c, term)?))
                .sum(),
        }
    }

    pub fn covariances_spd(&self) -> bool {
        match &self.cov {
            RowCovariance::Shared(c) => is_spd(c),
            RowCovariance::PerRow(v) => v.iter().all(is_spd),
        }
    }

    pub fn is_finite(&self) -> bool {
        let cov_ok = match &self.cov {
            RowCovariance::Shared(c) => c.iter().all(|x| x.is_finite()),
            RowCovariance::PerRow(v) => v.iter().all(|c| c.iter().all(|x| x.is_finite())),
        };
        cov_ok && self.mean.iter().all(|x| x.is_finite())
    }

    /// Keeps only the latent columns listed in `keep`.
    pub fn select_columns(&mut self, keep: &[usize]) {
        let sub = |c: &DMatrix<f64>| DMatrix::from_fn(keep.len(), keep.len(), |i, j| c[(keep[i], keep[j])]);
        self.mean = self.mean.select_columns(keep);
        self.cov = match &self.cov {
            RowCovariance::Shared(c) => RowCovariance::Shared(sub(c)),
            RowCovariance::PerRow(v) => RowCovariance::PerRow(v.iter().map(sub).collect()),
        };
    }
}

/// Independent Gamma factors sharing a family, stored as shape/rate vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaQ {
    pub shape: DVector<f64>,
    pub rate: DVector<f64>,
}

impl GammaQ {
    pub fn from_prior(len: usize, prior: GammaPrior) -> Self {
        Self {
            shape: DVector::from_element(len, prior.shape),
            rate: DVector::from_element(len, prior.rate),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.shape[i] / self.rate[i]
    }

    pub fn means(&self) -> DVector<f64> {
        self.shape.component_div(&self.rate)
    }

    pub fn ln_mean(&self, i: usize) -> f64 {
        digamma(self.shape[i]) - self.rate[i].ln()
    }

    pub fn ln_means(&self) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.ln_mean(i))
    }

    /// Summed entropy of all entries.
    pub fn entropy(&self) -> f64 {
        self.shape
            .iter()
            .zip(self.rate.iter())
            .map(|(&a, &b)| a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a))
            .sum()
    }

    /// Summed `E_q[ln p]` under a common Gamma prior.
    pub fn expected_log_prior(&self, prior: GammaPrior) -> f64 {
        let (a0, b0) = (prior.shape, prior.rate);
        (0..self.len())
            .map(|i| a0 * b0.ln() - ln_gamma(a0) + (a0 - 1.0) * self.ln_mean(i) - b0 * self.mean(i))
            .sum()
    }

    pub fn select(&mut self, keep: &[usize]) {
        self.shape = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.shape[i]));
        self.rate = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.rate[i]));
    }

    pub fn is_valid(&self) -> bool {
        self.shape.iter().chain(self.rate.iter()).all(|&x| x > 0.0 && x.is_finite())
    }
}

/// Expansion centres of the logistic lower bound, one per label cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiParams {
    pub xi: DMatrix<f64>,
}

/// The complete variational posterior.
///
/// Shapes: `z` is `N×K`, `g` is `N×S`, `y` is `N×C`, `w[m]` is `K×D_m`,
/// `v[m]` is `D_m×S`, `u` is `C×K`, `vy` is `C×S`, where `S` is the number of
/// active generative dimensions. `delta` and `lambda` carry `M + 1` entries;
/// the last belongs to the output view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub hyper: Hyperparams,
    pub view_names: Vec<String>,
    pub classes: Vec<String>,
    pub z: GaussianRowsQ,
    pub g: GaussianRowsQ,
    pub y: GaussianRowsQ,
    pub w: Vec<GaussianRowsQ>,
    pub v: Vec<GaussianRowsQ>,
    pub u: GaussianRowsQ,
    pub vy: GaussianRowsQ,
    pub tau: GammaQ,
    pub eta: GammaQ,
    pub psi: Vec<GammaQ>,
    pub phi: Vec<GammaQ>,
    pub gamma: Vec<GammaQ>,
    pub delta: Vec<GammaQ>,
    pub lambda: Vec<GammaQ>,
    pub xi: XiParams,
    /// Original indices of the generative dimensions still in the model.
    pub active_s: Vec<usize>,
}

impl ModelState {
    pub fn n_samples(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_views(&self) -> usize {
        self.w.len()
    }

    pub fn n_classes(&self) -> usize {
        self.u.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.dim()
    }

    pub fn s(&self) -> usize {
        self.g.dim()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.v.iter().map(|v| v.nrows()).collect()
    }

    /// Checks that every factor has the shape implied by (N, C, K, S, D_m).
    pub fn check_dimensions(&self) -> Result<()> {
        let (n, c, k, s, m) = (self.n_samples(), self.n_classes(), self.k(), self.s(), self.n_views());
        let mut bad = Vec::new();
        let mut expect = |name: String, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                bad.push(format!("{name}: {got:?} != {want:?}"));
            }
        };
        expect("g".into(), self.g.mean.shape(), (n, s));
        expect("y".into(), self.y.mean.shape(), (n, c));
        expect("u".into(), self.u.mean.shape(), (c, k));
        expect("vy".into(), self.vy.mean.shape(), (c, s));
        expect("xi".into(), self.xi.xi.shape(), (n, c));
        for i in 0..m {
            let d = self.v[i].nrows();
            expect(format!("w[{i}]"), self.w[i].mean.shape(), (k, d));
            expect(format!("v[{i}]"), self.v[i].mean.shape(), (d, s));
            expect(format!("phi[{i}]"), (self.phi[i].len(), 1), (k, 1));
            expect(format!("gamma[{i}]"), (self.gamma[i].len(), 1), (d, 1));
            expect(format!("delta[{i}]"), (self.delta[i].len(), 1), (s, 1));
            expect(format!("lambda[{i}]"), (self.lambda[i].len(), 1), (d, 1));
        }
        expect("delta[Y]".into(), (self.delta[m].len(), 1), (s, 1));
        expect("lambda[Y]".into(), (self.lambda[m].len(), 1), (c, 1));
        expect("active_s".into(), (self.active_s.len(), 1), (s, 1));
        let lens = [self.psi.len(), self.phi.len(), self.gamma.len(), self.delta.len() - 1, self.lambda.len() - 1];
        if lens.iter().any(|&l| l != m) {
            bad.push(format!("per-view factor counts {lens:?} != {m}"));
        }
        if self.active_s.windows(2).any(|w| w[0] >= w[1]) {
            bad.push("active_s not strictly increasing".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Structural(bad.join("; ")))
        }
    }

    /// Every Gaussian factor has symmetric positive-definite covariances.
    pub fn covariances_spd(&self) -> bool {
        [&self.z, &self.g, &self.y, &self.u, &self.vy]
            .into_iter()
            .chain(self.w.iter())
            .chain(self.v.iter())
            .all(|q| q.covariances_spd())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let archive = StateArchive {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            n_samples: self.n_samples(),
            view_dims: self.view_dims(),
            n_classes: self.n_classes(),
            k: self.k(),
            s: self.s(),
            state: self.clone(),
        };
        let text = serde_json::to_string(&archive).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let archive: StateArchive =
            serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if archive.format != ARCHIVE_FORMAT || archive.version != ARCHIVE_VERSION {
            return Err(Error::Serde(format!(
                "{}: unsupported archive {} v{}",
                path.display(),
                archive.format,
                archive.version
            )));
        }
        archive.state.check_dimensions()?;
        if archive.state.view_dims() != archive.view_dims || archive.state.s() != archive.s {
            return Err(Error::Structural("archive header disagrees with its contents".into()));
        }
        Ok(archive.state)
    }
}

const ARCHIVE_FORMAT: &str = "dualvb-state";
const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateArchive {
    format: String,
    version: u32,
    n_samples: usize,
    view_dims: Vec<usize>,
    n_classes: usize,
    k: usize,
    s: usize,
    state: ModelState,
}

const INIT_SCALE: f64 = 0.01;

fn small_normal(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    // column-major fill order keeps draws reproducible across nalgebra versions
    let mut m = DMatrix::zeros(r, c);
    for j in 0..c {
        for i in 0..r {
            let x: f64 = rng.sample(StandardNormal);
            m[(i, j)] = INIT_SCALE * x;
        }
    }
    m
}

/// Deterministic initialization: loadings and weights `~ 0.01·N(0, 1)`,
/// latent means zero, `⟨Y⟩ = 2t − 1` on labeled rows, identity covariances,
/// Gamma factors at their priors and `ξ = 1`.
pub fn init_state(ds: &MultiViewDataset, hp: &Hyperparams) -> Result<ModelState> {
    hp.validate()?;
    let n = ds.n_samples();
    let c = ds.n_classes();
    if n == 0 || c == 0 || ds.views.iter().any(|v| v.ncols() == 0) {
        return Err(Error::Structural("dataset has a zero dimension".into()));
    }
    let k = hp.resolve_k(c);
    let s = hp.s;
    let p = &hp.priors;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);

    let mut w = Vec::new();
    let mut v = Vec::new();
    for view in &ds.views {
        w.push(GaussianRowsQ::with_identity(small_normal(&mut rng, k, view.ncols())));
        v.push(GaussianRowsQ::with_identity(small_normal(&mut rng, view.ncols(), s)));
    }
    let u = GaussianRowsQ::with_identity(small_normal(&mut rng, c, k));
    let vy = GaussianRowsQ::with_identity(small_normal(&mut rng, c, s));

    let mut y_mean = DMatrix::zeros(n, c);
    for r in 0..n {
        if ds.labels.labeled[r] {
            for j in 0..c {
                y_mean[(r, j)] = 2.0 * ds.labels.onehot[(r, j)] - 1.0;
            }
        }
    }

    let dims = ds.view_dims();
    let mut delta: Vec<GammaQ> = dims.iter().map(|_| GammaQ::from_prior(s, p.delta)).collect();
    delta.push(GammaQ::from_prior(s, p.delta_y));
    let mut lambda: Vec<GammaQ> = dims.iter().map(|&d| GammaQ::from_prior(d, p.lambda)).collect();
    lambda.push(GammaQ::from_prior(c, p.lambda_y));

    let state = ModelState {
        hyper: hp.clone(),
        view_names: ds.views.iter().map(|v| v.name.clone()).collect(),
        classes: ds.labels.classes.clone(),
        z: GaussianRowsQ::with_identity(DMatrix::zeros(n, k)),
        g: GaussianRowsQ::with_identity(DMatrix::zeros(n, s)),
        y: GaussianRowsQ::with_identity(y_mean),
        w,
        v,
        u,
        vy,
        tau: GammaQ::from_prior(1, p.tau),
        eta: GammaQ::from_prior(1, p.eta),
        psi: dims.iter().map(|_| GammaQ::from_prior(1, p.psi)).collect(),
        phi: dims.iter().map(|_| GammaQ::from_prior(k, p.phi)).collect(),
        gamma: dims.iter().map(|&d| GammaQ::from_prior(d, p.gamma)).collect(),
        delta,
        lambda,
        xi: XiParams {
            xi: DMatrix::from_element(n, c, 1.0),
        },
        active_s: (0..s).collect(),
    };
    state.check_dimensions()?;
    Ok(state)
}
