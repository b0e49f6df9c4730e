//! Small numeric helpers shared by the inference and prediction code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal jitter added before every inversion.
pub const JITTER: f64 = 1e-10;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large `|x|`.
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Average of the upper and lower triangles.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Inverts a symmetric positive-definite precision matrix, returning the
/// covariance and its log-determinant.
pub fn invert_precision(precision: &DMatrix<f64>, term: &str) -> Result<(DMatrix<f64>, f64)> {
    let n = precision.nrows();
    let mut p = precision.clone();
    symmetrize(&mut p);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(term, "precision matrix has non-finite entries"));
    }
    // exact first; diagonal jitter only if the factorization fails
    let mut chol = p.clone().cholesky();
    if chol.is_none() {
        for i in 0..n {
            p[(i, i)] += JITTER;
        }
        chol = p.cholesky();
    }
    let chol = chol.ok_or_else(|| Error::numerical(term, "precision matrix is not positive definite"))?;
    let logdet_prec: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    Ok((cov, -logdet_prec))
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>, term: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical(term, "covariance is not positive definite"))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Symmetric and Cholesky-factorizable.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return false;
            }
        }
    }
    m.clone().cholesky().is_some()
}

/// `tr(A B)` for square matrices of equal size without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.2) - 0.768_524_783_499_018_4).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((ln_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(ln_sigmoid(800.0).abs() < 1e-300);
    }

    #[test]
    fn inversion_returns_log_determinant() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (cov, logdet) = invert_precision(&p, "test").unwrap();
        let prod = &p * &cov;
        assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-9);
        assert!((logdet + 11.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn indefinite_precision_is_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(invert_precision(&p, "x").is_err());
        assert!(!is_spd(&p));
    }

    #[test]
    fn trace_of_product_matches_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        assert!((trace_of_product(&a, &b) - (&a * &b).trace()).abs() < 1e-14);
    }
}
