use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

const BISECTION_TOLERANCE: f64 = 1e-10;
const BISECTION_MAX_ITERS: usize = 200;
/// Eigenvalue gaps below this at the rounding cut count as ties.
const TIE_TOLERANCE: f64 = 1e-10;

/// A point of the Fantope `F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FantopeIterate {
    pub b: DMatrix<f64>,
    pub k: usize,
}

impl FantopeIterate {
    /// `(k / r) I`, the centre of `F_k`.
    pub fn barycenter(r: usize, k: usize) -> Self {
        FantopeIterate {
            b: DMatrix::identity(r, r) * (k as f64 / r as f64),
            k,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// Checks `tr B = k` (within `trace_tol`) and that the spectrum lies in
    /// `[-spectrum_tol, 1 + spectrum_tol]`.
    pub fn is_feasible(&self, trace_tol: f64, spectrum_tol: f64) -> bool {
        if (self.b.trace() - self.k as f64).abs() > trace_tol {
            return false;
        }
        match sym_eigen(&self.b) {
            Ok(e) => e
                .values
                .iter()
                .all(|&v| v >= -spectrum_tol && v <= 1.0 + spectrum_tol),
            Err(_) => false,
        }
    }
}

fn clipped_sum(values: &[f64], mult: &[f64], t: f64) -> f64 {
    values
        .iter()
        .zip(mult)
        .map(|(&l, &m)| m * (l - t).clamp(0.0, 1.0))
        .sum()
}

/// Finds `t` with `sum_i mult_i clip(values_i - t, 0, 1) = k`, where
/// `mult_i` is the multiplicity of eigenvalue `values_i`.
pub(crate) fn shift_threshold(values: &[f64], mult: &[f64], k: usize) -> Result<f64> {
    let target = k as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::NonFinite("Fantope projection input".into()));
    }
    let mut lo = min - 1.0;
    let mut hi = max;
    let mut t = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    for _ in 0..BISECTION_MAX_ITERS {
        t = 0.5 * (lo + hi);
        let s = clipped_sum(values, mult, t);
        residual = s - target;
        if residual.abs() <= BISECTION_TOLERANCE {
            break;
        }
        if s > target {
            lo = t;
        } else {
            hi = t;
        }
    }
    // The clipped sum is piecewise linear in t; one exact step on the
    // current piece removes the remaining bisection error.
    let active: f64 = values
        .iter()
        .zip(mult)
        .filter(|(&l, _)| l - t > 0.0 && l - t < 1.0)
        .map(|(_, &m)| m)
        .sum();
    if active > 0.0 {
        let refined = t + residual / active;
        let same_piece = values.iter().all(|&l| {
            ((l - t > 0.0) == (l - refined > 0.0)) && ((l - t < 1.0) == (l - refined < 1.0))
        });
        if same_piece {
            let r = clipped_sum(values, mult, refined) - target;
            if r.abs() <= residual.abs() {
                t = refined;
                residual = r;
            }
        }
    }
    if !(residual.abs() <= BISECTION_TOLERANCE) {
        return Err(Error::FantopeNonConvergence { residual });
    }
    Ok(t)
}

/// Frobenius-norm projection of a symmetric matrix onto `F_k`.
///
/// Eigendecompose `(A + A^T)/2 = V diag(l) V^T`, find the shift `t` with
/// `sum_i clip(l_i - t, 0, 1) = k` by bisection, and return
/// `V diag(clip(l - t, 0, 1)) V^T`.
pub fn fantope_project(a: &DMatrix<f64>, k: usize) -> Result<FantopeIterate> {
    let r = a.nrows();
    if k < 1 || k >= r {
        return Err(Error::InvalidArgument(format!(
            "Fantope rank must satisfy 1 <= k < {r}, got {k}"
        )));
    }
    let eig = sym_eigen(a)?;
    let t = shift_threshold(eig.values.as_slice(), &vec![1.0; r], k)?;
    let clipped = eig.values.map(|l| (l - t).clamp(0.0, 1.0));
    let b = &eig.vectors * DMatrix::from_diagonal(&clipped) * eig.vectors.transpose();
    Ok(FantopeIterate {
        b: crate::linalg::symmetrize(&b),
        k,
    })
}

/// Orthogonal projection obtained by rounding a Fantope point.
#[derive(Debug, Clone, PartialEq)]
pub struct Rounding {
    /// `k x r`, orthonormal rows: the erased directions.
    pub w: DMatrix<f64>,
    /// `I - W^T W`.
    pub p: DMatrix<f64>,
    /// Whether the `k`-th eigenvalue was tied with its neighbour.
    pub tie: bool,
}

fn lexicographic_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Rounds `B` to the projection that removes its top-`k` eigenvectors.
///
/// If the `k`-th and `(k+1)`-th eigenvalues are tied (within 1e-10), the
/// eigenvectors of the tied cluster are ordered lexicographically by their
/// sign-normalized components, largest first, and a warning is logged.
pub fn round_projection(b: &FantopeIterate) -> Result<Rounding> {
    let r = b.dim();
    let k = b.k;
    if k < 1 || k >= r {
        return Err(Error::InvalidArgument(format!(
            "rounding rank must satisfy 1 <= k < {r}, got {k}"
        )));
    }
    let eig = sym_eigen(&b.b)?;
    let mut order: Vec<usize> = (0..r).collect();
    let cut = eig.values[k - 1];
    let tie = (cut - eig.values[k]).abs() < TIE_TOLERANCE;
    if tie {
        let cluster: Vec<usize> = (0..r)
            .filter(|&i| (eig.values[i] - cut).abs() < TIE_TOLERANCE)
            .collect();
        let mut sorted = cluster.clone();
        let cols: Vec<Vec<f64>> = (0..r)
            .map(|i| eig.vectors.column(i).iter().copied().collect())
            .collect();
        sorted.sort_by(|&i, &j| lexicographic_desc(&cols[i], &cols[j]));
        for (slot, idx) in cluster.iter().zip(sorted) {
            order[*slot] = idx;
        }
        log::warn!(
            "eigenvalue tie at rounding position {k} (value {cut:e}); using lexicographic tie-break"
        );
    }
    let mut w = DMatrix::zeros(k, r);
    for (row, &col) in order.iter().take(k).enumerate() {
        w.set_row(row, &eig.vectors.column(col).transpose());
    }
    let p = DMatrix::identity(r, r) - w.transpose() * &w;
    Ok(Rounding { w, p, tie })
}
