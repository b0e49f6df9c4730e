//! Simple reference imputers used by the missing-data benchmark.

use nalgebra::DMatrix;

use crate::data::{MultiViewDataset, ViewMatrix};

fn column_means(v: &ViewMatrix) -> Vec<f64> {
    (0..v.ncols())
        .map(|d| {
            let (sum, cnt) = (0..v.nrows())
                .filter(|&n| v.observed[(n, d)])
                .fold((0.0, 0usize), |(s, c), n| (s + v.values[(n, d)], c + 1));
            if cnt == 0 {
                0.0
            } else {
                sum / cnt as f64
            }
        })
        .collect()
}

fn filled(ds: &MultiViewDataset, fill: impl Fn(usize, &ViewMatrix) -> DMatrix<f64>) -> MultiViewDataset {
    let mut out = ds.clone();
    for (m, v) in out.views.iter_mut().enumerate() {
        v.values = fill(m, &ds.views[m]);
        v.observed.fill(true);
    }
    out
}

/// Fills every masked cell with its column's observed mean.
pub fn mean_impute(ds: &MultiViewDataset) -> MultiViewDataset {
    filled(ds, |_, v| {
        let means = column_means(v);
        DMatrix::from_fn(v.nrows(), v.ncols(), |n, d| {
            if v.observed[(n, d)] {
                v.values[(n, d)]
            } else {
                means[d]
            }
        })
    })
}

/// Euclidean distance over mutually observed features, rescaled by
/// `sqrt(D / #shared)` so rows with few shared features are comparable.
fn masked_distance(v: &ViewMatrix, a: usize, b: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for d in 0..v.ncols() {
        if v.observed[(a, d)] && v.observed[(b, d)] {
            sum += (v.values[(a, d)] - v.values[(b, d)]).powi(2);
            shared += 1;
        }
    }
    (shared > 0).then(|| (sum * v.ncols() as f64 / shared as f64).sqrt())
}

/// k-nearest-neighbour imputation within each view. Donors must observe the
/// target feature; cells without any donor fall back to the column mean.
pub fn knn_impute(ds: &MultiViewDataset, k: usize) -> MultiViewDataset {
    filled(ds, |_, v| {
        let means = column_means(v);
        let mut out = v.values.clone();
        for n in 0..v.nrows() {
            let missing: Vec<usize> = (0..v.ncols()).filter(|&d| !v.observed[(n, d)]).collect();
            if missing.is_empty() {
                continue;
            }
            let mut dists: Vec<(f64, usize)> = (0..v.nrows())
                .filter(|&r| r != n)
                .filter_map(|r| masked_distance(v, n, r).map(|dist| (dist, r)))
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for d in missing {
                let donors: Vec<f64> = dists
                    .iter()
                    .filter(|(_, r)| v.observed[(*r, d)])
                    .take(k)
                    .map(|(_, r)| v.values[(*r, d)])
                    .collect();
                out[(n, d)] = if donors.is_empty() {
                    means[d]
                } else {
                    donors.iter().sum::<f64>() / donors.len() as f64
                };
            }
        }
        out
    })
}
