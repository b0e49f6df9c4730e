use nalgebra::DMatrix;

use crate::data::MultiViewDataset;

/// Training-time view of one modality.
///
/// `working` holds observed values and, at masked cells, the current
/// imputations; it is the covariate matrix of the task-oriented regression.
/// `observed_only` holds observed values with zeros at masked cells and feeds
/// the masked reconstruction likelihood.
#[derive(Debug, Clone)]
pub struct ObservedView {
    pub working: DMatrix<f64>,
    pub observed_only: DMatrix<f64>,
    pub observed: DMatrix<bool>,
    pub n_observed: usize,
    pub sum_sq_observed: f64,
    pub missing_by_row: Vec<Vec<usize>>,
    pub missing_by_col: Vec<Vec<usize>>,
    /// `workingᵀ working`
    pub gram: DMatrix<f64>,
}

impl ObservedView {
    fn new(values: &DMatrix<f64>, observed: &DMatrix<bool>) -> Self {
        let (n, d) = values.shape();
        let observed_only = DMatrix::from_fn(n, d, |i, j| if observed[(i, j)] { values[(i, j)] } else { 0.0 });
        let mut missing_by_row = vec![Vec::new(); n];
        let mut missing_by_col = vec![Vec::new(); d];
        for j in 0..d {
            for i in 0..n {
                if !observed[(i, j)] {
                    missing_by_row[i].push(j);
                    missing_by_col[j].push(i);
                }
            }
        }
        let working = observed_only.clone();
        let gram = working.tr_mul(&working);
        Self {
            sum_sq_observed: observed_only.iter().map(|x| x * x).sum(),
            n_observed: observed.iter().filter(|&&o| o).count(),
            working,
            observed_only,
            observed: observed.clone(),
            missing_by_row,
            missing_by_col,
            gram,
        }
    }

    pub fn has_missing(&self) -> bool {
        self.n_observed < self.observed.len()
    }

    /// Writes `fill` into masked cells and returns the largest absolute change.
    pub fn set_imputed(&mut self, fill: &DMatrix<f64>) -> f64 {
        let (n, d) = self.working.shape();
        let n_missing = self.observed.len() - self.n_observed;
        // sparse row updates beat a full rebuild when few cells per row move
        let incremental = 3 * n_missing * d < n * d * d;
        let mut change: f64 = 0.0;
        for (i, cols) in self.missing_by_row.iter().enumerate() {
            if cols.is_empty() {
                continue;
            }
            let delta: Vec<(usize, f64)> = cols.iter().map(|&j| (j, fill[(i, j)] - self.working[(i, j)])).collect();
            if incremental {
                // (x + δ)ᵀ(x + δ) − xᵀx = xᵀδ + δᵀx + δᵀδ
                for &(j, dj) in &delta {
                    for k in 0..d {
                        let t = self.working[(i, k)] * dj;
                        self.gram[(k, j)] += t;
                        self.gram[(j, k)] += t;
                    }
                }
                for &(j, dj) in &delta {
                    for &(l, dl) in &delta {
                        self.gram[(j, l)] += dj * dl;
                    }
                }
            }
            for &(j, dj) in &delta {
                change = change.max(dj.abs());
                self.working[(i, j)] = fill[(i, j)];
            }
        }
        if change > 0.0 && !incremental {
            self.gram = self.working.tr_mul(&self.working);
        }
        change
    }
}

/// Data as seen by the inference loop.
#[derive(Debug, Clone)]
pub struct Observations {
    pub views: Vec<ObservedView>,
    pub targets: DMatrix<f64>,
    pub labeled: Vec<bool>,
}

impl Observations {
    /// Masked cells start at zero (the column mean after standardization).
    pub fn new(ds: &MultiViewDataset) -> Self {
        Self {
            views: ds.views.iter().map(|v| ObservedView::new(&v.values, &v.observed)).collect(),
            targets: ds.labels.onehot.clone(),
            labeled: ds.labels.labeled.clone(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labeled.len()
    }

    pub fn has_missing(&self) -> bool {
        self.views.iter().any(|v| v.has_missing())
    }
}
