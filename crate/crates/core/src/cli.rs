//! Command-line entry points and the evaluation workflows behind them.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{self, FoldedLoadings, LoadingKind};
use crate::data::{self, load_dataset, split_folds, standardize, MultiViewDataset, StandardizeStats};
use crate::error::{Error, Result};
use crate::impute::{self, baseline};
use crate::inference::{self, Fit};
use crate::metrics::{self, MetricReport};
use crate::predict::{self, LatentSpaces, PredictiveOutput, Projection};
use crate::state::{ConvergenceRule, Hyperparams, ModelState};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "dualvb", version, about = "Multi-view variational latent factor classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model (optionally with cross-validation).
    Train(TrainArgs),
    /// Predict class probabilities with a fitted model.
    Predict(PredictArgs),
    /// Fill masked view entries with a fitted model.
    Impute(ImputeArgs),
    /// Compare internal imputation with mean and kNN filling over missing rates.
    MissingBench(BenchArgs),
    /// Cross-fold factor stability and per-view variance explained.
    Factors(FactorArgs),
    /// Sample a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Unlabeled and test rows take part in training with hidden labels.
    #[default]
    Semi,
    /// Only labeled training rows are used; test rows are projected afterwards.
    Supervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpacesArg {
    Zg,
    Z,
    G,
}

impl From<SpacesArg> for LatentSpaces {
    fn from(s: SpacesArg) -> Self {
        match s {
            SpacesArg::Zg => LatentSpaces::Zg,
            SpacesArg::Z => LatentSpaces::Z,
            SpacesArg::G => LatentSpaces::G,
        }
    }
}

/// Options shared by every command that fits models.
#[derive(Debug, Clone, Args, Default)]
pub struct FitOpts {
    /// TOML file with hyperparameters; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Treat --eps as relative to the current bound.
    #[arg(long)]
    pub relative: bool,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Task-oriented latent size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Initial generative latent size.
    #[arg(long)]
    pub s: Option<usize>,
}

impl FitOpts {
    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let mut hp = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Hyperparams::default(),
        };
        if let Some(s) = self.seed {
            hp.seed = s;
        }
        if let Some(e) = self.eps {
            hp.convergence_eps = e;
        }
        if self.relative {
            hp.convergence_rule = ConvergenceRule::Relative;
        }
        if let Some(m) = self.max_iters {
            hp.max_iters = m;
        }
        if self.k.is_some() {
            hp.k = self.k;
        }
        if let Some(s) = self.s {
            hp.s = s;
        }
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long, value_enum, default_value_t = Mode::Semi)]
    pub mode: Mode,
    /// Run stratified cross-validation with this many folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_enum, default_value_t = SpacesArg::Zg)]
    pub spaces: SpacesArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Standardization statistics; defaults to standardize.json next to the state.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SpacesArg::Zg)]
    pub spaces: SpacesArg,
    /// Rows are the training rows: use their fitted posteriors.
    #[arg(long)]
    pub transductive: bool,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitOpts,
    /// Comma-separated missing rates.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.10, 0.15, 0.20, 0.25, 0.30])]
    pub rates: Vec<f64>,
    /// Number of random masks per rate.
    #[arg(long, default_value_t = 10)]
    pub masks: usize,
    /// Base seed of the masks.
    #[arg(long, default_value_t = 0)]
    pub mask_seed: u64,
    /// Fold count of the split; fold 0 is the test set.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 5)]
    pub knn: usize,
}

#[derive(Debug, Args)]
pub struct FactorArgs {
    /// State archives, one per fold.
    #[arg(long, num_args = 1.., required = true)]
    pub states: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest providing feature names.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub cos: f64,
    #[arg(long, default_value_t = 8)]
    pub min_folds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub view_threshold: f64,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file with the synthetic configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit status for an error: 1 configuration or input, 2 numerical, 3 I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical { .. } => 2,
        Error::Io { .. } | Error::Serde(_) => 3,
        Error::Structural(_) | Error::Parse { .. } | Error::Config(_) => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Impute(a) => cmd_impute(&a),
        Command::MissingBench(a) => cmd_missing_bench(&a),
        Command::Factors(a) => cmd_factors(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    fs::write(p, s).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Serde(e.to_string()))?;
    write_text(p, &s)
}

fn labeled_rows(ds: &MultiViewDataset, rows: &[usize]) -> Vec<usize> {
    rows.iter().cloned().filter(|&r| ds.labels.labeled[r]).collect()
}

/// Everything produced by fitting on one train/test split.
pub struct SplitResult {
    pub fit: Fit,
    pub stats: StandardizeStats,
    pub output: PredictiveOutput,
    /// Labeled test rows, in the order of `output`.
    pub test_rows: Vec<usize>,
    pub report: Option<MetricReport>,
}

/// Standardizes with training-row statistics, fits according to `mode` and
/// predicts the test rows. Test labels are never seen by the fit.
pub fn evaluate_split(
    ds: &MultiViewDataset,
    train: &[usize],
    test: &[usize],
    hp: &Hyperparams,
    mode: Mode,
    spaces: LatentSpaces,
) -> Result<SplitResult> {
    let train_ds = ds.select_rows(train)?;
    let stats = StandardizeStats::fit(&train_ds);
    let (scaled, _) = standardize(ds, Some(&stats))?;
    let (fit, output) = match mode {
        Mode::Semi => {
            let hidden = scaled.mask_labels(test);
            let fit = inference::fit(&hidden, hp)?;
            let out = predict::predict(&fit.state, Projection::Transductive(test), spaces)?;
            (fit, out)
        }
        Mode::Supervised => {
            let rows = labeled_rows(ds, train);
            let fit = inference::fit(&scaled.select_rows(&rows)?, hp)?;
            let test_ds = scaled.select_rows(test)?;
            let out = predict::predict(&fit.state, Projection::Inductive(&test_ds), spaces)?;
            (fit, out)
        }
    };
    let truth: Vec<Option<usize>> = test.iter().map(|&r| ds.labels.class_of(r)).collect();
    let keep: Vec<usize> = (0..test.len()).filter(|&i| truth[i].is_some()).collect();
    let report = (!keep.is_empty()).then(|| {
        let scores = output.proba.select_rows(&keep);
        let pred: Vec<usize> = keep.iter().map(|&i| output.hard_label[i]).collect();
        let labels: Vec<usize> = keep.iter().map(|&i| truth[i].unwrap()).collect();
        MetricReport::new(&scores, &pred, &labels)
    });
    Ok(SplitResult {
        fit,
        stats,
        output,
        test_rows: test.to_vec(),
        report,
    })
}

/// Predictions as delimited text: per-class probability, mean and variance,
/// then the predicted class name.
pub fn predictions_csv(out: &PredictiveOutput, classes: &[String], rows: &[usize]) -> String {
    let mut s = String::from("row");
    for prefix in ["proba", "y_mean", "y_var"] {
        for c in classes {
            let _ = write!(s, ",{prefix}_{c}");
        }
    }
    s.push_str(",label\n");
    for (i, &r) in rows.iter().enumerate() {
        let _ = write!(s, "{r}");
        for m in [&out.proba, &out.y_mean, &out.y_var] {
            for j in 0..classes.len() {
                let _ = write!(s, ",{}", m[(i, j)]);
            }
        }
        let _ = writeln!(s, ",{}", classes[out.hard_label[i]]);
    }
    s
}

fn save_fit(dir: &Path, fit: &Fit, stats: &StandardizeStats) -> Result<()> {
    create_dir(dir)?;
    fit.state.save(&dir.join("state.json"))?;
    stats.save(&dir.join("standardize.json"))?;
    fit.trace.write_csv(&dir.join("elbo_trace.csv"))?;
    write_json(&dir.join("fit_report.json"), &fit.report)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let hp = a.fit.hyperparams()?;
    let ds = load_dataset(&a.manifest)?;
    create_dir(&a.out)?;
    let spaces: LatentSpaces = a.spaces.into();
    let Some(n_folds) = a.folds else {
        let all: Vec<usize> = (0..ds.n_samples()).collect();
        let rows = match a.mode {
            Mode::Semi => all,
            Mode::Supervised => labeled_rows(&ds, &all),
        };
        let train_ds = ds.select_rows(&rows)?;
        let (scaled, stats) = standardize(&train_ds, None)?;
        let fit = inference::fit(&scaled, &hp)?;
        save_fit(&a.out, &fit, &stats)?;
        println!(
            "trained: {} sweeps, converged {}, bound {:.6}, S {} -> {}",
            fit.report.iterations, fit.report.converged, fit.report.final_elbo, fit.report.initial_s, fit.report.final_s
        );
        return Ok(());
    };
    let folds = split_folds(&ds, n_folds, a.split_seed)?;
    let mut table = String::from("fold,auc,bacc,n_test,iterations,final_s\n");
    let mut aucs = Vec::new();
    let mut baccs = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let res = evaluate_split(&ds, &fold.train, &fold.test, &hp, a.mode, spaces)?;
        let dir = a.out.join(format!("fold_{f}"));
        save_fit(&dir, &res.fit, &res.stats)?;
        write_text(&dir.join("predictions.csv"), &predictions_csv(&res.output, &ds.labels.classes, &res.test_rows))?;
        let (auc, bacc, n) = res.report.as_ref().map_or((f64::NAN, f64::NAN, 0), |r| (r.auc, r.bacc, r.n_evaluated));
        info!("fold {f}: auc {auc:.4}, bacc {bacc:.4}");
        let _ = writeln!(table, "{f},{auc},{bacc},{n},{},{}", res.fit.report.iterations, res.fit.state.s());
        aucs.push(auc);
        baccs.push(bacc);
    }
    write_text(&a.out.join("cv_metrics.csv"), &table)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("cross-validation: mean auc {:.4}, mean bacc {:.4}", mean(&aucs), mean(&baccs));
    Ok(())
}

fn stats_path(state: &Path, given: &Option<PathBuf>) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| state.parent().unwrap_or(Path::new(".")).join("standardize.json"))
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let state = ModelState::load(&a.state)?;
    let stats = StandardizeStats::load(&stats_path(&a.state, &a.stats))?;
    let ds = load_dataset(&a.manifest)?;
    if ds.labels.classes != state.classes {
        return Err(Error::Structural(format!(
            "dataset classes {:?} differ from the model's {:?}",
            ds.labels.classes, state.classes
        )));
    }
    let (scaled, _) = standardize(&ds, Some(&stats))?;
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    let projection = if a.transductive {
        Projection::Transductive(&rows)
    } else {
        Projection::Inductive(&scaled)
    };
    let out = predict::predict(&state, projection, a.spaces.into())?;
    create_dir(&a.out)?;
    write_text(&a.out.join("predictions.csv"), &predictions_csv(&out, &state.classes, &rows))?;
    let keep = labeled_rows(&ds, &rows);
    if !keep.is_empty() {
        let labels: Vec<usize> = keep.iter().map(|&r| ds.labels.class_of(r).unwrap()).collect();
        let pred: Vec<usize> = keep.iter().map(|&r| out.hard_label[r]).collect();
        let report = MetricReport::new(&out.proba.select_rows(&keep), &pred, &labels);
        println!("auc {:.4}, bacc {:.4} over {} labeled rows", report.auc, report.bacc, report.n_evaluated);
        write_json(&a.out.join("metrics.json"), &report)?;
    }
    Ok(())
}

/// Imputations on the original scale. Observed cells are copied from the
/// input unchanged.
pub fn impute_original_scale(
    state: &ModelState,
    ds: &MultiViewDataset,
    stats: &StandardizeStats,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let (scaled, _) = standardize(ds, Some(stats))?;
    let res = impute::impute(state, &scaled)?;
    let mut values = Vec::new();
    let mut variances = Vec::new();
    for (m, view) in ds.views.iter().enumerate() {
        let sd = &stats.views[m].std;
        values.push(DMatrix::from_fn(view.nrows(), view.ncols(), |n, d| {
            if view.observed[(n, d)] {
                view.values[(n, d)]
            } else {
                stats.unscale(m, d, res.values[m][(n, d)])
            }
        }));
        variances.push(DMatrix::from_fn(view.nrows(), view.ncols(), |n, d| res.variances[m][(n, d)] * sd[d] * sd[d]));
    }
    Ok((values, variances))
}

fn cmd_impute(a: &ImputeArgs) -> Result<()> {
    let state = ModelState::load(&a.state)?;
    let stats = StandardizeStats::load(&stats_path(&a.state, &a.stats))?;
    let ds = load_dataset(&a.manifest)?;
    let (values, variances) = impute_original_scale(&state, &ds, &stats)?;
    create_dir(&a.out)?;
    for (m, view) in ds.views.iter().enumerate() {
        data::write_matrix(&a.out.join(format!("{}_imputed.csv", view.name)), &view.features, &values[m], None)?;
        data::write_matrix(&a.out.join(format!("{}_variance.csv", view.name)), &view.features, &variances[m], None)?;
    }
    let n_missing: usize = ds.views.iter().map(|v| v.nrows() * v.ncols() - v.n_observed()).sum();
    println!("imputed {n_missing} cells");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeMethod {
    Internal,
    Mean,
    Knn,
}

impl ImputeMethod {
    pub const ALL: [ImputeMethod; 3] = [ImputeMethod::Internal, ImputeMethod::Mean, ImputeMethod::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Internal => "internal",
            Self::Mean => "mean",
            Self::Knn => "knn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub rate: f64,
    pub mask: usize,
    pub method: ImputeMethod,
    pub bacc: f64,
    pub auc: f64,
    /// Imputation error on masked cells, original scale.
    pub rmse: f64,
}

/// RMSE over the cells that are observed in `truth` but masked in `masked`.
fn masked_rmse(truth: &MultiViewDataset, masked: &MultiViewDataset, filled: &[DMatrix<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (m, t) in truth.views.iter().enumerate() {
        let mask = DMatrix::from_fn(t.nrows(), t.ncols(), |r, d| t.observed[(r, d)] && !masked.views[m].observed[(r, d)]);
        let k = mask.iter().filter(|&&b| b).count();
        if k > 0 {
            sum += metrics::rmse_masked(&filled[m], &t.values, &mask)?.powi(2) * k as f64;
            n += k;
        }
    }
    Ok(if n == 0 { f64::NAN } else { (sum / n as f64).sqrt() })
}

/// One benchmark cell: mask `ds` at `rate`, fill or not according to
/// `method`, fit semi-supervised and score the test rows.
pub fn bench_cell(
    ds: &MultiViewDataset,
    fold: &data::Fold,
    hp: &Hyperparams,
    rate: f64,
    mask_seed: u64,
    method: ImputeMethod,
    knn: usize,
) -> Result<BenchRow> {
    let masked = data::apply_mcar_mask(ds, rate, mask_seed)?;
    let input = match method {
        ImputeMethod::Internal => masked.clone(),
        ImputeMethod::Mean => baseline::mean_impute(&masked),
        ImputeMethod::Knn => baseline::knn_impute(&masked, knn),
    };
    let res = evaluate_split(&input, &fold.train, &fold.test, hp, Mode::Semi, LatentSpaces::Zg)?;
    let filled: Vec<DMatrix<f64>> = match method {
        ImputeMethod::Internal => impute_original_scale(&res.fit.state, &masked, &res.stats)?.0,
        _ => input.views.iter().map(|v| v.values.clone()).collect(),
    };
    let (bacc, auc) = res.report.as_ref().map_or((f64::NAN, f64::NAN), |r| (r.bacc, r.auc));
    Ok(BenchRow {
        rate,
        mask: mask_seed as usize,
        method,
        bacc,
        auc,
        rmse: if rate > 0.0 { masked_rmse(ds, &masked, &filled)? } else { 0.0 },
    })
}

/// Every rate × mask × method cell. Mask `i` uses seed `mask_seed + i`.
pub fn missing_bench(
    ds: &MultiViewDataset,
    hp: &Hyperparams,
    rates: &[f64],
    masks: usize,
    mask_seed: u64,
    fold: &data::Fold,
    knn: usize,
) -> Result<Vec<BenchRow>> {
    let cells: Vec<(f64, u64, ImputeMethod)> = rates
        .iter()
        .flat_map(|&r| (0..masks as u64).flat_map(move |i| ImputeMethod::ALL.map(|m| (r, mask_seed + i, m))))
        .collect();
    cells
        .par_iter()
        .map(|&(rate, seed, method)| {
            let mut row = bench_cell(ds, fold, hp, rate, seed, method, knn)?;
            row.mask = (seed - mask_seed) as usize;
            Ok(row)
        })
        .collect()
}

fn cmd_missing_bench(a: &BenchArgs) -> Result<()> {
    let hp = a.fit.hyperparams()?;
    if a.rates.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::Config("missing rates must lie in [0, 1)".into()));
    }
    let ds = load_dataset(&a.manifest)?;
    let fold = split_folds(&ds, a.folds, a.split_seed)?.swap_remove(0);
    let rows = missing_bench(&ds, &hp, &a.rates, a.masks, a.mask_seed, &fold, a.knn)?;
    create_dir(&a.out)?;
    let mut s = String::from("rate,mask,method,bacc,auc,rmse\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.rate, r.mask, r.method.name(), r.bacc, r.auc, r.rmse);
    }
    write_text(&a.out.join("bench.csv"), &s)?;
    let mut summary = String::from("rate,method,mean_bacc,mean_auc,mean_rmse\n");
    for &rate in &a.rates {
        for m in ImputeMethod::ALL {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.rate == rate && r.method == m).collect();
            let avg = |f: fn(&BenchRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64;
            let _ = writeln!(summary, "{rate},{},{},{},{}", m.name(), avg(|r| r.bacc), avg(|r| r.auc), avg(|r| r.rmse));
        }
    }
    write_text(&a.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn factor_summary_text(kind: LoadingKind, summaries: &[analysis::FactorSummary], set: &analysis::StableFactorSet) -> String {
    let mut s = format!(
        "# {} factors: {} of {} stable\n",
        kind.label(),
        set.n_stable,
        set.n_reference
    );
    for f in summaries {
        let _ = writeln!(s, "\n## factor {}", f.factor);
        for v in &f.views {
            let _ = writeln!(s, "- {} ({:.1}%)", v.view, 100.0 * v.fraction);
            for (name, w) in &v.top_features {
                let _ = writeln!(s, "  - {name}: {w:.4}");
            }
        }
    }
    s
}

fn cmd_factors(a: &FactorArgs) -> Result<()> {
    let states = a.states.iter().map(|p| ModelState::load(p)).collect::<Result<Vec<_>>>()?;
    let names = match &a.manifest {
        Some(m) => Some(load_dataset(m)?.views.iter().flat_map(|v| v.features.clone()).collect()),
        None => None,
    };
    create_dir(&a.out)?;
    let mut doc = String::new();
    let mut json = Vec::new();
    for kind in [LoadingKind::Weights, LoadingKind::Generative] {
        let folded = FoldedLoadings::from_states(&states, kind, names.clone())?;
        let set = analysis::stable_factors(&folded, a.cos, a.min_folds);
        let summaries = analysis::summarize_factors(&folded, &set, a.view_threshold, a.top);
        let tag = kind.label();
        write_text(&a.out.join(format!("stability_{tag}.csv")), &analysis::stability_csv(&folded, &set))?;
        write_text(&a.out.join(format!("loadings_{tag}.csv")), &analysis::loadings_csv(&folded))?;
        doc += &factor_summary_text(kind, &summaries, &set);
        doc.push('\n');
        println!("{tag}: {} of {} factors stable", set.n_stable, set.n_reference);
        json.push(serde_json::json!({ "kind": kind, "stability": set, "summary": summaries }));
    }
    write_text(&a.out.join("factor_summary.md"), &doc)?;
    write_json(&a.out.join("factors.json"), &json)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (ds, truth) = synth::generate_seeded(&cfg)?;
    let manifest = data::write_dataset(&ds, &a.out)?;
    truth.save(&a.out.join("ground_truth.json"))?;
    let echo = toml::to_string_pretty(&cfg).map_err(|e| Error::Serde(e.to_string()))?;
    write_text(&a.out.join("synth_config.toml"), &echo)?;
    println!(
        "simulated N={} views={:?} C={} -> {}",
        ds.n_samples(),
        ds.view_dims(),
        ds.n_classes(),
        manifest.display()
    );
    Ok(())
}
