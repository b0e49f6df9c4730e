//! Multi-view datasets with per-entry observation masks and partially
//! observed labels: loading, writing, standardization, MCAR masking and
//! stratified fold splitting.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are replaced by 1.0.
pub const STD_FLOOR: f64 = 1e-8;

/// One view (modality): an `N × D` block of values plus its observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    pub name: String,
    pub features: Vec<String>,
    pub values: DMatrix<f64>,
    pub observed: DMatrix<bool>,
}

impl ViewMatrix {
    pub fn new(
        name: impl Into<String>,
        features: Vec<String>,
        values: DMatrix<f64>,
        observed: DMatrix<bool>,
    ) -> Result<Self> {
        let name = name.into();
        if values.shape() != observed.shape() {
            return Err(Error::Structural(format!(
                "view '{name}': values {:?} and mask {:?} differ in shape",
                values.shape(),
                observed.shape()
            )));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Structural(format!("view '{name}' is empty")));
        }
        if features.len() != values.ncols() {
            return Err(Error::Structural(format!(
                "view '{name}': {} feature names for {} columns",
                features.len(),
                values.ncols()
            )));
        }
        Ok(Self {
            name,
            features,
            values,
            observed,
        })
    }

    /// A fully observed view with generated feature names.
    pub fn dense(name: impl Into<String>, values: DMatrix<f64>) -> Result<Self> {
        let name = name.into();
        let features = (0..values.ncols()).map(|d| format!("{name}_{d}")).collect();
        let observed = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(name, features, values, observed)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }
}

/// One-hot labels with a per-row "labeled" flag. Unlabeled rows carry a
/// zero row in `onehot`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub onehot: DMatrix<f64>,
    pub labeled: Vec<bool>,
    pub classes: Vec<String>,
}

impl LabelMatrix {
    /// Builds labels from per-row class indices (`None` = unlabeled).
    pub fn from_indices(indices: &[Option<usize>], classes: Vec<String>) -> Result<Self> {
        let c = classes.len();
        if c == 0 {
            return Err(Error::Structural("label matrix needs at least one class".into()));
        }
        let mut onehot = DMatrix::zeros(indices.len(), c);
        let mut labeled = Vec::with_capacity(indices.len());
        for (n, idx) in indices.iter().enumerate() {
            match idx {
                Some(k) if *k < c => {
                    onehot[(n, *k)] = 1.0;
                    labeled.push(true);
                }
                Some(k) => {
                    return Err(Error::Structural(format!(
                        "row {n}: class index {k} out of range for {c} classes"
                    )))
                }
                None => labeled.push(false),
            }
        }
        Ok(Self {
            onehot,
            labeled,
            classes,
        })
    }

    pub fn nrows(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_classes(&self) -> usize {
        self.onehot.ncols()
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn class_of(&self, n: usize) -> Option<usize> {
        if !self.labeled[n] {
            return None;
        }
        (0..self.n_classes()).find(|&c| self.onehot[(n, c)] == 1.0)
    }

    pub fn class_indices(&self) -> Vec<Option<usize>> {
        (0..self.nrows()).map(|n| self.class_of(n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<ViewMatrix>,
    pub labels: LabelMatrix,
}

impl MultiViewDataset {
    pub fn new(views: Vec<ViewMatrix>, labels: LabelMatrix) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Structural("dataset has no views".into()));
        }
        let n = labels.nrows();
        if n == 0 {
            return Err(Error::Structural("dataset has no rows".into()));
        }
        for v in &views {
            if v.nrows() != n {
                return Err(Error::Structural(format!(
                    "view '{}' has {} rows, labels have {n}",
                    v.name,
                    v.nrows()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for v in &views {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Structural(format!("duplicate view name '{}'", v.name)));
            }
        }
        for n in 0..n {
            if labels.labeled[n] {
                let s: f64 = labels.onehot.row(n).sum();
                if s != 1.0 {
                    return Err(Error::Structural(format!("labeled row {n} sums to {s}, not 1")));
                }
            }
        }
        Ok(Self { views, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.nrows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.n_classes()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.views.iter().map(|v| v.n_observed()).sum()
    }

    /// Rows `rows` of every view and of the labels, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let views = self
            .views
            .iter()
            .map(|v| {
                let values = v.values.select_rows(rows);
                let observed = v.observed.select_rows(rows);
                ViewMatrix::new(v.name.clone(), v.features.clone(), values, observed)
            })
            .collect::<Result<Vec<_>>>()?;
        let idx = self.labels.class_indices();
        let picked: Vec<_> = rows.iter().map(|&r| idx[r]).collect();
        let labels = LabelMatrix::from_indices(&picked, self.labels.classes.clone())?;
        Self::new(views, labels)
    }

    /// Copy with the labels of `rows` hidden (transductive semi-supervision).
    pub fn mask_labels(&self, rows: &[usize]) -> Self {
        let mut out = self.clone();
        for &r in rows {
            out.labels.labeled[r] = false;
            out.labels.onehot.row_mut(r).fill(0.0);
        }
        out
    }
}

/// Per-view, per-feature mean and standard deviation over observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub views: Vec<FeatureStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizeStats {
    pub fn fit(ds: &MultiViewDataset) -> Self {
        let views = ds
            .views
            .iter()
            .map(|v| {
                let mut mean = Vec::with_capacity(v.ncols());
                let mut std = Vec::with_capacity(v.ncols());
                for d in 0..v.ncols() {
                    let vals: Vec<f64> = (0..v.nrows())
                        .filter(|&n| v.observed[(n, d)])
                        .map(|n| v.values[(n, d)])
                        .collect();
                    if vals.is_empty() {
                        mean.push(0.0);
                        std.push(1.0);
                        continue;
                    }
                    let mu = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / vals.len() as f64;
                    let sd = var.sqrt();
                    mean.push(mu);
                    std.push(if sd < STD_FLOOR { 1.0 } else { sd });
                }
                FeatureStats {
                    name: v.name.clone(),
                    mean,
                    std,
                }
            })
            .collect();
        Self { views }
    }

    fn check(&self, ds: &MultiViewDataset) -> Result<()> {
        if self.views.len() != ds.n_views()
            || self.views.iter().zip(&ds.views).any(|(s, v)| s.mean.len() != v.ncols())
        {
            return Err(Error::Structural("standardization stats do not match dataset views".into()));
        }
        Ok(())
    }

    /// Maps standardized values of view `m`, column `d` back to raw scale.
    pub fn unscale(&self, m: usize, d: usize, value: f64) -> f64 {
        value * self.views[m].std[d] + self.views[m].mean[d]
    }

    pub fn inverse_transform(&self, ds: &MultiViewDataset) -> Result<MultiViewDataset> {
        self.check(ds)?;
        let mut out = ds.clone();
        for (m, v) in out.views.iter_mut().enumerate() {
            let s = &self.views[m];
            for d in 0..v.ncols() {
                for n in 0..v.nrows() {
                    if v.observed[(n, d)] {
                        v.values[(n, d)] = v.values[(n, d)] * s.std[d] + s.mean[d];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Z-scores each feature over its observed entries. With `stats` given, those
/// are applied instead of freshly computed ones. Unobserved cells are set to 0.
pub fn standardize(
    ds: &MultiViewDataset,
    stats: Option<&StandardizeStats>,
) -> Result<(MultiViewDataset, StandardizeStats)> {
    let stats = match stats {
        Some(s) => {
            s.check(ds)?;
            s.clone()
        }
        None => StandardizeStats::fit(ds),
    };
    let mut out = ds.clone();
    for (m, v) in out.views.iter_mut().enumerate() {
        let s = &stats.views[m];
        for d in 0..v.ncols() {
            for n in 0..v.nrows() {
                v.values[(n, d)] = if v.observed[(n, d)] {
                    (v.values[(n, d)] - s.mean[d]) / s.std[d]
                } else {
                    0.0
                };
            }
        }
    }
    Ok((out, stats))
}

/// Masks `⌊rate · #observed⌋` additional view entries chosen uniformly at
/// random. Labels are untouched.
pub fn apply_mcar_mask(ds: &MultiViewDataset, rate: f64, seed: u64) -> Result<MultiViewDataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("missing rate {rate} outside [0, 1]")));
    }
    let mut cells = Vec::new();
    for (m, v) in ds.views.iter().enumerate() {
        for n in 0..v.nrows() {
            for d in 0..v.ncols() {
                if v.observed[(n, d)] {
                    cells.push((m, n, d));
                }
            }
        }
    }
    let n_mask = (rate * cells.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (picked, _) = cells.partial_shuffle(&mut rng, n_mask);
    let mut out = ds.clone();
    for &(m, n, d) in picked.iter() {
        out.views[m].observed[(n, d)] = false;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified K-fold partition of the rows. Unlabeled rows form their own
/// stratum. Falls back to an unstratified split when some class has fewer
/// members than folds.
pub fn split_folds(ds: &MultiViewDataset, n_folds: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = ds.n_samples();
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if n < n_folds {
        return Err(Error::Config(format!("{n} rows cannot be split into {n_folds} folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes() + 1];
    for (row, class) in ds.labels.class_indices().into_iter().enumerate() {
        strata[class.unwrap_or(ds.n_classes())].push(row);
    }
    let too_small = strata[..ds.n_classes()]
        .iter()
        .any(|s| !s.is_empty() && s.len() < n_folds);
    if too_small {
        warn!("a class has fewer members than {n_folds} folds; using an unstratified split");
        strata = vec![(0..n).collect()];
    }
    let mut assignment = vec![0usize; n];
    let mut next = 0usize;
    for stratum in strata.iter_mut() {
        stratum.shuffle(&mut rng);
        for &row in stratum.iter() {
            assignment[row] = next % n_folds;
            next += 1;
        }
    }
    Ok((0..n_folds)
        .map(|f| Fold {
            train: (0..n).filter(|&r| assignment[r] != f).collect(),
            test: (0..n).filter(|&r| assignment[r] == f).collect(),
        })
        .collect())
}

/// On-disk description of a dataset: one delimited file per view plus a
/// label file, all paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub views: Vec<ManifestView>,
    pub labels: PathBuf,
    #[serde(default)]
    pub missing_token: Option<String>,
    #[serde(default)]
    pub class_order: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub name: String,
    pub path: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            row: 0,
            column: 0,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn is_missing(cell: &str, token: Option<&str>) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("nan") || token.is_some_and(|t| c.eq_ignore_ascii_case(t))
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok((header, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let csv::ErrorKind::Io(io) = e.into_kind() else {
                unreachable!()
            };
            Error::io(path, io)
        }
        _ => {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                file: path.to_path_buf(),
                row,
                column: 0,
                message: e.to_string(),
            }
        }
    }
}

fn read_view(name: &str, path: &Path, token: Option<&str>) -> Result<ViewMatrix> {
    let (features, rows) = read_table(path)?;
    let n = rows.len();
    let d = features.len();
    if n == 0 {
        return Err(Error::Structural(format!("view file {} has no data rows", path.display())));
    }
    let mut values = DMatrix::zeros(n, d);
    let mut observed = DMatrix::from_element(n, d, true);
    for (i, rec) in rows.iter().enumerate() {
        for (j, cell) in rec.iter().enumerate() {
            if is_missing(cell, token) {
                observed[(i, j)] = false;
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                // 1-based, counting the header line
                row: i + 2,
                column: j + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    row: i + 2,
                    column: j + 1,
                    message: format!("'{cell}' is not finite"),
                });
            }
            values[(i, j)] = v;
        }
    }
    ViewMatrix::new(name, features, values, observed)
}

fn read_labels(path: &Path, token: Option<&str>, order: Option<&[String]>) -> Result<LabelMatrix> {
    let (_, rows) = read_table(path)?;
    let mut classes: Vec<String> = order.map(|o| o.to_vec()).unwrap_or_default();
    let mut lookup: HashMap<String, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
    let mut idx = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        let cell = rec.get(0).unwrap_or("").trim();
        if is_missing(cell, token) {
            idx.push(None);
            continue;
        }
        let k = match lookup.get(cell) {
            Some(&k) => k,
            None if order.is_some() => {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    row: i + 2,
                    column: 1,
                    message: format!("class '{cell}' not in class_order"),
                })
            }
            None => {
                classes.push(cell.to_string());
                lookup.insert(cell.to_string(), classes.len() - 1);
                classes.len() - 1
            }
        };
        idx.push(Some(k));
    }
    LabelMatrix::from_indices(&idx, classes)
}

/// Reads the dataset described by a manifest file.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let token = manifest.missing_token.as_deref();
    let views = manifest
        .views
        .iter()
        .map(|v| read_view(&v.name, &base.join(&v.path), token))
        .collect::<Result<Vec<_>>>()?;
    let labels = read_labels(&base.join(&manifest.labels), token, manifest.class_order.as_deref())?;
    MultiViewDataset::new(views, labels)
}

/// Writes one view as delimited text; unobserved cells are left empty.
pub fn write_view(view: &ViewMatrix, path: &Path) -> Result<()> {
    write_matrix(path, &view.features, &view.values, Some(&view.observed))
}

/// Writes a matrix with a header row. Cells where `mask` is false are empty.
pub fn write_matrix(
    path: &Path,
    header: &[String],
    values: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for n in 0..values.nrows() {
        let rec: Vec<String> = (0..values.ncols())
            .map(|d| match mask {
                Some(m) if !m[(n, d)] => String::new(),
                _ => format!("{}", values[(n, d)]),
            })
            .collect();
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes every view, the label file and a manifest into `dir`, returning
/// the manifest path.
pub fn write_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for v in &ds.views {
        let file = PathBuf::from(format!("{}.csv", v.name));
        write_view(v, &dir.join(&file))?;
        entries.push(ManifestView {
            name: v.name.clone(),
            path: file,
        });
    }
    let label_file = PathBuf::from("labels.csv");
    let lpath = dir.join(&label_file);
    let mut w = csv::Writer::from_path(&lpath).map_err(|e| csv_error(&lpath, e))?;
    w.write_record(["label"]).map_err(|e| csv_error(&lpath, e))?;
    for class in ds.labels.class_indices() {
        let cell = class.map(|c| ds.labels.classes[c].clone()).unwrap_or_default();
        w.write_record([cell]).map_err(|e| csv_error(&lpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&lpath, e))?;
    let manifest = Manifest {
        views: entries,
        labels: label_file,
        missing_token: None,
        class_order: Some(ds.labels.classes.clone()),
    };
    let mpath = dir.join("manifest.toml");
    manifest.save(&mpath)?;
    Ok(mpath)
}
