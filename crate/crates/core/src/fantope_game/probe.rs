use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{logistic_loss, power_iteration, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    /// L2 penalty on the weights (the bias is not penalized).
    pub reg: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            reg: 1e-4,
            max_iters: 5_000,
            grad_tol: 1e-6,
        }
    }
}

/// L2-regularized logistic regression with a bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl LinearProbe {
    /// Minimizes `mean logistic loss + reg/2 |w|^2` with accelerated full-batch
    /// gradient descent (step `1 / Lipschitz`, restarted whenever the
    /// objective increases).
    pub fn fit(x: &DMatrix<f64>, y: &[bool], cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 {
            return Err(Error::Empty("probe training set".into()));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe features".into()));
        }
        let targets = DVector::from_iterator(n, y.iter().map(|&b| b as u8 as f64));
        // Lipschitz constant of the gradient w.r.t. (w, b)
        let mut aug = DMatrix::zeros(d + 1, d + 1);
        aug.view_mut((0, 0), (d, d)).copy_from(&x.tr_mul(x));
        let col_sums = x.row_sum().transpose();
        aug.view_mut((0, d), (d, 1)).copy_from(&col_sums);
        aug.view_mut((d, 0), (1, d))
            .copy_from(&col_sums.transpose());
        aug[(d, d)] = n as f64;
        let lipschitz = 0.25 * power_iteration(&aug, 200) * 1.05 / n as f64 + cfg.reg;
        let step = 1.0 / lipschitz;

        let objective = |w: &DVector<f64>, b: f64| -> f64 {
            let s = x * w;
            let loss: f64 = s
                .iter()
                .zip(y)
                .map(|(&si, &yi)| logistic_loss(yi, si + b))
                .sum();
            loss / n as f64 + 0.5 * cfg.reg * w.norm_squared()
        };
        let gradient = |w: &DVector<f64>, b: f64| -> (DVector<f64>, f64) {
            let s = x * w;
            let resid = DVector::from_iterator(n, s.iter().map(|&si| sigmoid(si + b))) - &targets;
            let gw = x.tr_mul(&resid) / n as f64 + w * cfg.reg;
            (gw, resid.sum() / n as f64)
        };

        let mut w = DVector::zeros(d);
        let mut b = 0.0;
        let mut yw = w.clone();
        let mut yb = b;
        let mut momentum = 1.0_f64;
        let mut current = objective(&w, b);
        let mut iterations = 0;
        for it in 0..cfg.max_iters {
            iterations = it + 1;
            let (gw0, gb0) = gradient(&w, b);
            let gnorm = (gw0.norm_squared() + gb0 * gb0).sqrt();
            if gnorm < cfg.grad_tol {
                break;
            }
            let (gw, gb) = gradient(&yw, yb);
            let nw = &yw - &gw * step;
            let nb = yb - gb * step;
            let next = objective(&nw, nb);
            if !next.is_finite() {
                return Err(Error::Divergence { step: it });
            }
            if next > current {
                // restart from a plain gradient step at the current iterate
                momentum = 1.0;
                yw = w.clone();
                yb = b;
                w = &w - &gw0 * step;
                b -= gb0 * step;
                current = objective(&w, b);
                continue;
            }
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / m_next;
            yw = &nw + (&nw - &w) * beta;
            yb = nb + (nb - b) * beta;
            w = nw;
            b = nb;
            momentum = m_next;
            current = next;
        }
        Ok(LinearProbe {
            weights: w,
            bias: b,
            iterations,
        })
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.weights).add_scalar(self.bias)
    }

    /// Fraction of rows whose predicted class (`score > 0`) matches `y`.
    pub fn accuracy(&self, x: &DMatrix<f64>, y: &[bool]) -> Result<f64> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::Empty("probe evaluation set".into()));
        }
        if x.ncols() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.ncols(),
            });
        }
        let s = self.scores(x);
        let hits = s
            .iter()
            .zip(y)
            .filter(|(&si, &yi)| (si > 0.0) == yi)
            .count();
        Ok(hits as f64 / y.len() as f64)
    }
}

/// Trains a fresh probe on `(features, labels)` and returns its accuracy on
/// the dev split.
pub fn linear_probe(
    features: &DMatrix<f64>,
    labels: &[bool],
    dev_features: &DMatrix<f64>,
    dev_labels: &[bool],
) -> Result<f64> {
    linear_probe_with(
        features,
        labels,
        dev_features,
        dev_labels,
        &ProbeConfig::default(),
    )
}

pub fn linear_probe_with(
    features: &DMatrix<f64>,
    labels: &[bool],
    dev_features: &DMatrix<f64>,
    dev_labels: &[bool],
    cfg: &ProbeConfig,
) -> Result<f64> {
    LinearProbe::fit(features, labels, cfg)?.accuracy(dev_features, dev_labels)
}
