//! Approximate kernel feature maps from a (landmark) Gram eigendecomposition.
//!
//! With `K_L = U Sigma U^T` the Gram matrix of the landmarks, training
//! landmarks get the features `(U sqrt(Sigma))_i` and any other point `x` is
//! mapped with the Nystrom extension
//!
//! ```text
//! phi(x) = k(x)^T U Sigma^{-1/2},   k(x)_l = kappa(x, landmark_l)
//! ```
//!
//! which agrees with `U sqrt(Sigma)` on the landmarks, so
//! `phi(x_i) . phi(x_j) = K_ij` whenever the decomposition is not truncated.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram_rows, KernelSpec};
use crate::linalg::{rows_of, sym_eigen};

/// Eigenvalues at or below this fraction of the largest one are dropped.
pub const DEFAULT_RELATIVE_DROP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NystromMap {
    /// `L x D`, one landmark per row.
    pub landmarks: DMatrix<f64>,
    pub kernel: KernelSpec,
    /// `L x r`, orthonormal columns.
    pub eigvecs: DMatrix<f64>,
    /// `r` retained eigenvalues, descending.
    pub eigvals: DVector<f64>,
    /// Absolute threshold used to truncate the spectrum.
    pub drop_tolerance: f64,
    landmark_rows: Vec<Vec<f64>>,
    /// `U Sigma^{-1/2}` (`L x r`).
    projection: DMatrix<f64>,
}

impl NystromMap {
    /// Rebuilds a map from its stored parts (as read back from disk).
    pub fn from_parts(
        landmarks: DMatrix<f64>,
        kernel: KernelSpec,
        eigvecs: DMatrix<f64>,
        eigvals: DVector<f64>,
        drop_tolerance: f64,
    ) -> Result<Self> {
        kernel.validate()?;
        if eigvecs.nrows() != landmarks.nrows() {
            return Err(Error::DimensionMismatch {
                expected: landmarks.nrows(),
                got: eigvecs.nrows(),
            });
        }
        if eigvecs.ncols() != eigvals.len() {
            return Err(Error::DimensionMismatch {
                expected: eigvecs.ncols(),
                got: eigvals.len(),
            });
        }
        if eigvals.is_empty() {
            return Err(Error::RankCollapse { largest: 0.0 });
        }
        if eigvals.iter().any(|&v| !(v > drop_tolerance)) {
            return Err(Error::InvalidArgument(
                "retained eigenvalues must exceed the drop tolerance".into(),
            ));
        }
        let inv_sqrt = eigvals.map(|v| 1.0 / v.sqrt());
        let projection = &eigvecs * DMatrix::from_diagonal(&inv_sqrt);
        Ok(NystromMap {
            landmark_rows: rows_of(&landmarks),
            landmarks,
            kernel,
            eigvecs,
            eigvals,
            drop_tolerance,
            projection,
        })
    }

    /// Feature dimension `r`.
    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    /// Input dimension `D`.
    pub fn input_dim(&self) -> usize {
        self.landmarks.ncols()
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.nrows()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Nystrom input".into()));
        }
        Ok(())
    }

    fn kernel_row(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.num_landmarks(),
            self.landmark_rows.iter().map(|l| self.kernel.value(x, l)),
        )
    }

    /// Feature vector of a single point.
    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_input(x)?;
        Ok(self.projection.tr_mul(&self.kernel_row(x)))
    }

    /// Features of every row of `x` (`N x D` in, `N x r` out).
    pub fn transform_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Nystrom input".into()));
        }
        let k = cross_gram(&self.kernel, &rows_of(x), &self.landmark_rows);
        Ok(k * &self.projection)
    }

    /// Jacobian of [`transform`](Self::transform) at `x` (`r x D`).
    pub fn transform_grad(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let d = self.input_dim();
        let mut g = DMatrix::zeros(self.num_landmarks(), d);
        let mut buf = vec![0.0; d];
        for (l, lm) in self.landmark_rows.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            self.kernel.add_grad(x, lm, 1.0, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                g[(l, j)] = *v;
            }
        }
        Ok(self.projection.tr_mul(&g))
    }

    /// Row-wise vector-Jacobian products: row `i` of the result is
    /// `J(x_i)^T g_i` (`B x D`).
    pub(crate) fn transform_vjp_rows(&self, x: &[Vec<f64>], g: &DMatrix<f64>) -> DMatrix<f64> {
        let weights = g * self.projection.transpose();
        let d = self.input_dim();
        let mut out = DMatrix::zeros(x.len(), d);
        let mut buf = vec![0.0; d];
        for (i, xi) in x.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            for (l, lm) in self.landmark_rows.iter().enumerate() {
                self.kernel.add_grad(xi, lm, weights[(i, l)], &mut buf);
            }
            for (j, v) in buf.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }
}

/// Builds a Nystrom map from `l` landmarks of `x` (`N x D`).
///
/// With `l == N` every row is a landmark, in order. Otherwise `l` rows are
/// drawn uniformly without replacement using `seed` and kept in ascending
/// row order. Negative eigenvalues (indefinite kernels) are clamped to zero
/// before truncation.
pub fn fit(x: &DMatrix<f64>, kernel: &KernelSpec, l: usize, seed: u64) -> Result<NystromMap> {
    fit_with_tolerance(x, kernel, l, seed, DEFAULT_RELATIVE_DROP)
}

/// [`fit`] with an explicit relative drop tolerance.
pub fn fit_with_tolerance(
    x: &DMatrix<f64>,
    kernel: &KernelSpec,
    l: usize,
    seed: u64,
    relative_drop: f64,
) -> Result<NystromMap> {
    kernel.validate()?;
    let n = x.nrows();
    if l < 1 || l > n {
        return Err(Error::InvalidArgument(format!(
            "landmark count must be in 1..={n}, got {l}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Nystrom training rows".into()));
    }
    let landmarks = if l == n {
        x.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, l).into_vec();
        idx.sort_unstable();
        x.select_rows(idx.iter())
    };
    let k = gram_rows(kernel, &rows_of(&landmarks));
    let eig = sym_eigen(&k)?;
    let largest = eig.values[0].max(0.0);
    let tol = relative_drop * largest;
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&i| eig.values[i].max(0.0) > tol)
        .collect();
    if largest <= 0.0 || keep.is_empty() {
        return Err(Error::RankCollapse {
            largest: eig.values[0],
        });
    }
    let eigvecs = eig.vectors.select_columns(keep.iter());
    let eigvals = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eig.values[i]));
    NystromMap::from_parts(landmarks, kernel.clone(), eigvecs, eigvals, tol)
}

/// Feature vector of `x` under `map`.
pub fn transform(map: &NystromMap, x: &[f64]) -> Result<DVector<f64>> {
    map.transform(x)
}

/// Jacobian of the feature map at `x`, `r x D`.
pub fn transform_grad(map: &NystromMap, x: &[f64]) -> Result<DMatrix<f64>> {
    map.transform_grad(x)
}
