//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Components smaller than this are skipped when choosing an eigenvector's
/// sign.
pub const SIGN_TOLERANCE: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and each eigenvector sign-normalized.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: DMatrix<f64>,
}

/// Returns `(a + a^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Flips `v` so that its first component with magnitude above
/// [`SIGN_TOLERANCE`] is positive.
pub fn normalize_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|c| c.abs() > SIGN_TOLERANCE) {
        if first < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
    }
}

/// Symmetric eigendecomposition of the explicitly symmetrized input.
///
/// The ordering is stable: equal eigenvalues keep the solver's order, so the
/// result is a deterministic function of the input bits.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<SortedEigen> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to eigensolver".into()));
    }
    let n = a.nrows();
    let eig = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        normalize_sign(&mut col);
        vectors.set_column(dst, &DVector::from_vec(col));
    }
    Ok(SortedEigen { values, vectors })
}

/// Copies the rows of an `N x D` matrix into contiguous vectors.
pub fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

/// Stacks equal-length rows into an `N x D` matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    dot(x, y) / (norm(x) * norm(y))
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub(crate) fn power_iteration(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / nw;
    }
    lambda.max(0.0)
}

/// Numerically stable `log(1 + exp(s))`.
pub fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit `s` against a 0/1 label.
pub fn logistic_loss(label: bool, s: f64) -> f64 {
    softplus(s) - if label { s } else { 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending_and_sign_normalized() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - 5.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
        assert!((e.values[2] - 1.0).abs() < 1e-12);
        for j in 0..3 {
            let first = e
                .vectors
                .column(j)
                .iter()
                .copied()
                .find(|c| c.abs() > 1e-12)
                .unwrap();
            assert!(first > 0.0);
        }
        let rebuilt = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((rebuilt - a).amax() < 1e-12);
    }

    #[test]
    fn logistic_loss_is_stable() {
        assert!((logistic_loss(true, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(logistic_loss(true, 800.0) < 1e-300);
        assert!((logistic_loss(false, 800.0) - 800.0).abs() < 1e-9);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 7.0, 3.0]));
        assert!((power_iteration(&a, 500) - 7.0).abs() < 1e-9);
    }
}
