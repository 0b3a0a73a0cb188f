//! Reference evaluation of the exact kernelized game for small anchor sets.
//!
//! With `w = sum_n alpha_n Phi(x_n)` and `theta = sum_n beta_n Phi(x_n)`, the
//! prediction of `theta` on `Phi(z)` after projecting out `w` is
//!
//! ```text
//! <theta, P_w Phi(z)> = sum_m beta_m ( kappa(x_m, z) - alpha^T K^(m)(z) alpha / alpha^T K alpha )
//! K^(m)(z)_ij = kappa(x_i, z) kappa(x_m, x_j)
//! ```
//!
//! Evaluating the whole objective this way costs `O(N^4)` for `N` anchors,
//! so this module is a validation tool rather than a solver; the
//! [`game_objective`] entry point refuses more than [`MAX_ANCHORS`] anchors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{gram_rows, KernelSpec};
use crate::linalg::{logistic_loss, rows_of};

pub const MAX_ANCHORS: usize = 64;

/// `alpha^T K alpha` must exceed this for the direction `w` to be usable.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

/// Dual coefficients of the concept direction `w` and the predictor `theta`.
#[derive(Debug, Clone)]
pub struct DualPair {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub anchors: DMatrix<f64>,
    pub kernel: KernelSpec,
    anchor_rows: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    w_norm_sq: f64,
}

impl DualPair {
    pub fn new(
        alpha: DVector<f64>,
        beta: DVector<f64>,
        anchors: DMatrix<f64>,
        kernel: KernelSpec,
    ) -> Result<Self> {
        kernel.validate()?;
        let n = anchors.nrows();
        if n == 0 {
            return Err(Error::Empty("anchor set".into()));
        }
        for (len, _) in [(alpha.len(), "alpha"), (beta.len(), "beta")] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if alpha
            .iter()
            .chain(beta.iter())
            .chain(anchors.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("dual pair".into()));
        }
        let anchor_rows = rows_of(&anchors);
        let gram = gram_rows(&kernel, &anchor_rows);
        let w_norm_sq = alpha.dot(&(&gram * &alpha));
        if !(w_norm_sq > DEGENERACY_TOLERANCE) {
            return Err(Error::DegenerateDirection(w_norm_sq));
        }
        Ok(DualPair {
            alpha,
            beta,
            anchors,
            kernel,
            anchor_rows,
            gram,
            w_norm_sq,
        })
    }

    pub fn len(&self) -> usize {
        self.anchor_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_rows.is_empty()
    }

    /// `alpha^T K alpha`, the squared RKHS norm of `w`.
    pub fn w_norm_sq(&self) -> f64 {
        self.w_norm_sq
    }
}

/// `<theta, P_w Phi(z)>`, built term by term from the matrices `K^(m)(z)`.
pub fn project_predict(pair: &DualPair, z: &[f64]) -> Result<f64> {
    let d = pair.anchors.ncols();
    if z.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query point".into()));
    }
    let n = pair.len();
    let kz = DVector::from_iterator(n, pair.anchor_rows.iter().map(|x| pair.kernel.value(x, z)));
    let mut total = 0.0;
    let mut km = DMatrix::zeros(n, n);
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                km[(i, j)] = kz[i] * pair.gram[(m, j)];
            }
        }
        let quad = pair.alpha.dot(&(&km * &pair.alpha));
        total += pair.beta[m] * (kz[m] - quad / pair.w_norm_sq);
    }
    Ok(total)
}

/// Summed binary logistic loss of the projected predictions on `z` (`M x D`).
pub fn game_objective(pair: &DualPair, z: &DMatrix<f64>, labels: &[bool]) -> Result<f64> {
    if pair.len() > MAX_ANCHORS {
        return Err(Error::SizeGate {
            limit: MAX_ANCHORS,
            got: pair.len(),
        });
    }
    if z.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: z.nrows(),
            got: labels.len(),
        });
    }
    rows_of(z)
        .iter()
        .zip(labels)
        .map(|(row, &y)| project_predict(pair, row).map(|s| logistic_loss(y, s)))
        .sum()
}

/// Explicit feature space of the degree-2 polynomial kernel on `R^2`.
///
/// `(gamma x.y + a)^2 = phi(x) . phi(y)` with
/// `phi(x) = (g x1^2, g x2^2, sqrt(2) g x1 x2, sqrt(2 g a) x1, sqrt(2 g a) x2, a)`.
/// Used to check the dual-form computations against brute force.
pub mod explicit {
    use nalgebra::{DMatrix, SVector};

    pub type Feature = SVector<f64, 6>;

    pub fn poly2_features(gamma: f64, alpha_offset: f64, x: &[f64]) -> Feature {
        let s2 = std::f64::consts::SQRT_2;
        let c = (2.0 * gamma * alpha_offset).sqrt();
        Feature::from([
            gamma * x[0] * x[0],
            gamma * x[1] * x[1],
            s2 * gamma * x[0] * x[1],
            c * x[0],
            c * x[1],
            alpha_offset,
        ])
    }

    /// `sum_n coef_n phi(x_n)`.
    pub fn combine(gamma: f64, alpha_offset: f64, anchors: &DMatrix<f64>, coef: &[f64]) -> Feature {
        (0..anchors.nrows()).fold(Feature::zeros(), |acc, n| {
            let row: Vec<f64> = anchors.row(n).iter().copied().collect();
            acc + poly2_features(gamma, alpha_offset, &row) * coef[n]
        })
    }

    /// `<theta, (I - w w^T / w^T w) phi(z)>` computed in feature space.
    pub fn project_predict(
        gamma: f64,
        alpha_offset: f64,
        anchors: &DMatrix<f64>,
        alpha: &[f64],
        beta: &[f64],
        z: &[f64],
    ) -> f64 {
        let w = combine(gamma, alpha_offset, anchors, alpha);
        let theta = combine(gamma, alpha_offset, anchors, beta);
        let phi = poly2_features(gamma, alpha_offset, z);
        let projected = phi - w * (w.dot(&phi) / w.dot(&w));
        theta.dot(&projected)
    }
}
