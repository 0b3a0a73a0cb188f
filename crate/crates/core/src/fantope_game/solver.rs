use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::probe::{LinearProbe, ProbeConfig};
use super::projection::{round_projection, shift_threshold, FantopeIterate};
use crate::error::{Error, Result};
use crate::linalg::{logistic_loss, sigmoid, sym_eigen, symmetrize};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lr_theta: f64,
    pub lr_b: f64,
    pub batch_size: usize,
    pub total_batches: usize,
    pub eval_every: usize,
    pub probe_reg: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lr_theta: 0.08,
            lr_b: 0.08,
            batch_size: 256,
            total_batches: 35_000,
            eval_every: 500,
            probe_reg: 1e-4,
            seed: 0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lr_theta.is_finite() && self.lr_theta > 0.0) {
            return bad("lr_theta must be positive");
        }
        if !(self.lr_b.is_finite() && self.lr_b > 0.0) {
            return bad("lr_b must be positive");
        }
        if self.batch_size == 0 || self.total_batches == 0 || self.eval_every == 0 {
            return bad("batch_size, total_batches and eval_every must be positive");
        }
        if !(self.probe_reg >= 0.0) {
            return bad("probe_reg must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    pub theta: DVector<f64>,
    pub b: FantopeIterate,
    /// `k x r`, orthonormal rows.
    pub w: DMatrix<f64>,
    /// `I - W^T W`.
    pub p: DMatrix<f64>,
    pub history: Vec<EvalRecord>,
    pub selected_step: usize,
}

impl GameSolution {
    pub fn k(&self) -> usize {
        self.b.k
    }
}

/// A Fantope point stored as `c I + Q diag(mu) Q^T` with `Q` orthonormal.
///
/// Each ascent step adds a rank-2 term, so the projection only needs the
/// eigendecomposition of a small core matrix; the isotropic part `c I`
/// covers the orthogonal complement of `Q`, where every eigenvalue equals
/// `c`. Directions whose eigenvalue falls back to `c` are dropped.
#[derive(Debug, Clone)]
struct StructuredEraser {
    r: usize,
    k: usize,
    c: f64,
    q: DMatrix<f64>,
    mu: DVector<f64>,
}

/// Core eigenvalues at or below this (relative to 1) merge into `c I`.
const MERGE_TOLERANCE: f64 = 1e-15;
/// Candidate directions shorter than this after orthogonalization are
/// already spanned by the basis.
const SPAN_TOLERANCE: f64 = 1e-10;

impl StructuredEraser {
    fn barycenter(r: usize, k: usize) -> Self {
        StructuredEraser {
            r,
            k,
            c: k as f64 / r as f64,
            q: DMatrix::zeros(r, 0),
            mu: DVector::zeros(0),
        }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let coeffs = self.q.tr_mul(v).component_mul(&self.mu);
        v * self.c + &self.q * coeffs
    }

    /// `X (I - B)` for a row-major feature matrix.
    fn erase(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xq = x * &self.q;
        let scaled = DMatrix::from_fn(xq.nrows(), xq.ncols(), |i, j| xq[(i, j)] * self.mu[j]);
        x * (1.0 - self.c) - scaled * self.q.transpose()
    }

    fn dense(&self) -> FantopeIterate {
        let scaled = DMatrix::from_fn(self.r, self.q.ncols(), |i, j| self.q[(i, j)] * self.mu[j]);
        let b = DMatrix::identity(self.r, self.r) * self.c + scaled * self.q.transpose();
        FantopeIterate {
            b: symmetrize(&b),
            k: self.k,
        }
    }

    /// Appends the parts of `extra` orthogonal to the current basis.
    fn extended_basis(&self, extra: &[&DVector<f64>]) -> DMatrix<f64> {
        let mut cols: Vec<DVector<f64>> = self.q.column_iter().map(|c| c.into_owned()).collect();
        for v in extra {
            let scale = v.norm();
            if scale == 0.0 {
                continue;
            }
            let mut w = (*v).clone() / scale;
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&w);
                    w.axpy(-proj, c, 1.0);
                }
            }
            let n = w.norm();
            if n > SPAN_TOLERANCE && cols.len() < self.r {
                cols.push(w / n);
            }
        }
        DMatrix::from_columns(&cols)
    }

    /// `B <- project(B - lr/2 (theta v^T + v theta^T))`.
    fn ascend(&mut self, theta: &DVector<f64>, v: &DVector<f64>, lr: f64) -> Result<()> {
        let basis = self.extended_basis(&[theta, v]);
        let s = basis.ncols();
        let a = basis.tr_mul(theta);
        let b = basis.tr_mul(v);
        let mut core = (&a * b.transpose() + &b * a.transpose()) * (-0.5 * lr);
        for i in 0..self.mu.len() {
            core[(i, i)] += self.mu[i];
        }
        let eig = sym_eigen(&core)?;
        let mut values: Vec<f64> = eig.values.iter().map(|m| self.c + m).collect();
        let mut mult = vec![1.0; s];
        if s < self.r {
            values.push(self.c);
            mult.push((self.r - s) as f64);
        }
        let t = shift_threshold(&values, &mult, self.k)?;
        let c = (self.c - t).clamp(0.0, 1.0);
        let rotated = basis * &eig.vectors;
        let keep: Vec<usize> = (0..s)
            .filter(|&i| ((values[i] - t).clamp(0.0, 1.0) - c).abs() > MERGE_TOLERANCE)
            .collect();
        self.q = DMatrix::from_fn(self.r, keep.len(), |row, j| rotated[(row, keep[j])]);
        self.mu = DVector::from_iterator(
            keep.len(),
            keep.iter().map(|&i| (values[i] - t).clamp(0.0, 1.0) - c),
        );
        self.c = c;
        Ok(())
    }
}

/// Iterate of the alternating solver, exposed so that callers can inspect
/// it between steps.
#[derive(Debug, Clone)]
pub struct GameState {
    pub theta: DVector<f64>,
    pub steps: usize,
    eraser: StructuredEraser,
    lr_theta: f64,
    lr_b: f64,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl GameState {
    /// `theta = 0`, `B` at the barycenter of `F_k`.
    pub fn new(n: usize, r: usize, k: usize, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if k < 1 || k >= r {
            return Err(Error::InvalidArgument(format!(
                "erasure rank must satisfy 1 <= k < {r}, got {k}"
            )));
        }
        if n == 0 {
            return Err(Error::Empty("training features".into()));
        }
        Ok(GameState {
            theta: DVector::zeros(r),
            steps: 0,
            eraser: StructuredEraser::barycenter(r, k),
            lr_theta: cfg.lr_theta,
            lr_b: cfg.lr_b,
            batch_size: cfg.batch_size.min(n),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: (0..n).collect(),
            cursor: n,
        })
    }

    /// The current relaxed eraser `B` as a dense matrix.
    pub fn b(&self) -> FantopeIterate {
        self.eraser.dense()
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if self.cursor + self.batch_size > n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }

    /// Mean loss on a batch and `v = sum_i (sigma(s_i) - y_i) phi_i / m`.
    fn batch_residual(
        &self,
        features: &DMatrix<f64>,
        labels: &[bool],
        batch: &[usize],
    ) -> (f64, DVector<f64>) {
        let r = features.ncols();
        let u = &self.theta - self.eraser.apply(&self.theta);
        let mut v = DVector::zeros(r);
        let mut loss = 0.0;
        for &i in batch {
            let row = features.row(i);
            let s = row.dot(&u.transpose());
            loss += logistic_loss(labels[i], s);
            let g = sigmoid(s) - labels[i] as u8 as f64;
            v.axpy(g, &row.transpose(), 1.0);
        }
        let m = batch.len() as f64;
        (loss / m, v / m)
    }

    /// One descent step on `theta` and one projected ascent step on `B`,
    /// each on its own minibatch. Returns the loss of the `theta` batch.
    pub fn step(&mut self, features: &DMatrix<f64>, labels: &[bool]) -> Result<f64> {
        if features.nrows() != self.order.len() || labels.len() != self.order.len() {
            return Err(Error::DimensionMismatch {
                expected: self.order.len(),
                got: features.nrows().min(labels.len()),
            });
        }
        if features.ncols() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: features.ncols(),
            });
        }
        let batch = self.next_batch();
        let (loss, v) = self.batch_residual(features, labels, &batch);
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.steps });
        }
        let grad_theta = &v - self.eraser.apply(&v);
        self.theta.axpy(-self.lr_theta, &grad_theta, 1.0);

        let batch = self.next_batch();
        let (loss_b, v) = self.batch_residual(features, labels, &batch);
        if !loss_b.is_finite() || self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Divergence { step: self.steps });
        }
        self.eraser.ascend(&self.theta, &v, self.lr_b)?;
        self.steps += 1;
        Ok(loss)
    }

    /// `X (I - B)`: the features with the current relaxed eraser applied.
    pub fn erase(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        self.eraser.erase(features)
    }
}

/// Solves the relaxed game on `features` and returns the iterate whose
/// erased features were least linearly decodable on the dev split.
///
/// At every `eval_every`-th batch (and after the last one) a fresh linear
/// probe is fitted to the `(I - B)`-transformed training features and scored
/// on the transformed dev features. Ties keep the earliest step.
pub fn solve(
    features: &DMatrix<f64>,
    labels: &[bool],
    dev_features: &DMatrix<f64>,
    dev_labels: &[bool],
    k: usize,
    cfg: &SolverConfig,
) -> Result<GameSolution> {
    let (n, r) = features.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if dev_features.nrows() == 0 || dev_labels.is_empty() {
        return Err(Error::Empty("dev split".into()));
    }
    if dev_labels.len() != dev_features.nrows() {
        return Err(Error::DimensionMismatch {
            expected: dev_features.nrows(),
            got: dev_labels.len(),
        });
    }
    if dev_features.ncols() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            got: dev_features.ncols(),
        });
    }
    if features
        .iter()
        .chain(dev_features.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("game features".into()));
    }
    let mut state = GameState::new(n, r, k, cfg)?;
    let probe_cfg = ProbeConfig {
        reg: cfg.probe_reg,
        ..ProbeConfig::default()
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, DVector<f64>, StructuredEraser)> = None;
    for step in 1..=cfg.total_batches {
        state.step(features, labels)?;
        if step % cfg.eval_every != 0 && step != cfg.total_batches {
            continue;
        }
        let probe = LinearProbe::fit(&state.erase(features), labels, &probe_cfg)?;
        let acc = probe.accuracy(&state.erase(dev_features), dev_labels)?;
        log::debug!("game step {step}: dev probe accuracy {acc:.4}");
        history.push(EvalRecord {
            step,
            dev_accuracy: acc,
        });
        if best.as_ref().is_none_or(|(a, ..)| acc < *a) {
            best = Some((acc, step, state.theta.clone(), state.eraser.clone()));
        }
    }
    let (_, selected_step, theta, eraser) = best.expect("at least one evaluation");
    let b = eraser.dense();
    let rounding = round_projection(&b)?;
    Ok(GameSolution {
        theta,
        b,
        w: rounding.w,
        p: rounding.p,
        history,
        selected_step,
    })
}
