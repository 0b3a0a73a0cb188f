//! Concept-recovery adversaries: dual kernel logistic regression and a
//! one-hidden-layer MLP, plus the cross-kernel transfer table.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram_rows, uniform, KernelSpec};
use crate::linalg::{logistic_loss, power_iteration, rows_of, sigmoid};

pub const DEFAULT_KERNEL_CAP: usize = 8_000;

/// Anything that assigns a real score to each row; positive means `true`.
pub trait Adversary {
    fn scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>>;
}

/// Fraction of rows whose sign prediction (`score > 0`) matches `y`.
pub fn accuracy(adv: &dyn Adversary, x: &DMatrix<f64>, y: &[bool]) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Empty("adversary evaluation set".into()));
    }
    let s = adv.scores(x)?;
    Ok(score_accuracy(s.as_slice(), y))
}

pub fn score_accuracy(scores: &[f64], y: &[bool]) -> f64 {
    let hits = scores
        .iter()
        .zip(y)
        .filter(|(&s, &t)| (s > 0.0) == t)
        .count();
    hits as f64 / y.len() as f64
}

fn check_labels(x: &DMatrix<f64>, y: &[bool]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("adversary training set".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adversary inputs".into()));
    }
    Ok(())
}

fn single_class(y: &[bool]) -> Option<bool> {
    let first = y[0];
    y.iter().all(|&b| b == first).then_some(first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub reg: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub cap: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            reg: 1e-3,
            max_iters: 10_000,
            grad_tol: 1e-6,
            cap: DEFAULT_KERNEL_CAP,
        }
    }
}

/// `f(z) = sum_n c_n kappa(x_n, z) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelAdversary {
    pub kernel: KernelSpec,
    pub anchors: DMatrix<f64>,
    pub coef: DVector<f64>,
    pub bias: f64,
    pub reg: f64,
    pub iterations: usize,
}

impl Adversary for KernelAdversary {
    fn scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.anchors.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.anchors.ncols(),
                got: x.ncols(),
            });
        }
        let k = cross_gram(&self.kernel, &rows_of(x), &rows_of(&self.anchors));
        Ok((k * &self.coef).add_scalar(self.bias))
    }
}

/// Fits an L2-regularized kernel logistic regression
///
/// ```text
/// min_c,b  (1/N) sum_n loss(y_n, (K c)_n + b) + reg/2 c^T K c
/// ```
///
/// by accelerated gradient descent in function space: the update direction
/// for `c` is the RKHS gradient `(sigma(f) - y)/N + reg c`, which avoids
/// multiplying by `K` twice per step. Single-class labels give a constant
/// classifier.
pub fn fit_kernel(
    x: &DMatrix<f64>,
    y: &[bool],
    kernel: &KernelSpec,
    cfg: &KernelConfig,
) -> Result<KernelAdversary> {
    kernel.validate()?;
    check_labels(x, y)?;
    let n = x.nrows();
    if n > cfg.cap {
        return Err(Error::CapExceeded {
            cap: cfg.cap,
            got: n,
        });
    }
    if !(cfg.reg > 0.0 && cfg.reg.is_finite()) {
        return Err(Error::InvalidArgument(
            "kernel adversary reg must be positive".into(),
        ));
    }
    if let Some(class) = single_class(y) {
        log::warn!("kernel adversary trained on a single class; returning a constant classifier");
        return Ok(KernelAdversary {
            kernel: kernel.clone(),
            anchors: x.clone(),
            coef: DVector::zeros(n),
            bias: if class { 1.0 } else { -1.0 },
            reg: cfg.reg,
            iterations: 0,
        });
    }
    let k = gram_rows(kernel, &rows_of(x));
    let nf = n as f64;
    let targets: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
    let lipschitz = power_iteration(&k, 100).abs() * 1.05 / (4.0 * nf) + 0.25 + cfg.reg;
    let step = 1.0 / lipschitz;

    // f = K c + b is tracked alongside c so each iteration needs one product.
    let objective = |c: &DVector<f64>, f: &DVector<f64>, b: f64| -> f64 {
        let data: f64 = f
            .iter()
            .zip(y)
            .map(|(&fi, &yi)| logistic_loss(yi, fi))
            .sum();
        let quad = c.dot(&f.add_scalar(-b));
        data / nf + 0.5 * cfg.reg * quad
    };
    let direction = |c: &DVector<f64>, f: &DVector<f64>| -> (DVector<f64>, f64) {
        let resid = DVector::from_iterator(
            n,
            f.iter()
                .zip(&targets)
                .map(|(&fi, &t)| (sigmoid(fi) - t) / nf),
        );
        let bias_grad = resid.sum();
        (resid + c * cfg.reg, bias_grad)
    };

    let mut c = DVector::zeros(n);
    let mut b = 0.0;
    let mut f = DVector::zeros(n);
    let mut current = objective(&c, &f, b);
    let (mut yc, mut yb, mut yf) = (c.clone(), b, f.clone());
    let mut momentum = 1.0_f64;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let (dc, db) = direction(&yc, &yf);
        if (dc.norm_squared() + db * db).sqrt() < cfg.grad_tol {
            break;
        }
        let nc = &yc - dc * step;
        let nb = yb - db * step;
        let nf_vals = (&k * &nc).add_scalar(nb);
        let next = objective(&nc, &nf_vals, nb);
        if !next.is_finite() {
            return Err(Error::Divergence { step: it });
        }
        if next > current && momentum > 1.0 {
            momentum = 1.0;
            yc = c.clone();
            yb = b;
            yf = f.clone();
            continue;
        }
        let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / m_next;
        yc = &nc + (&nc - &c) * beta;
        yb = nb + (nb - b) * beta;
        yf = &nf_vals + (&nf_vals - &f) * beta;
        c = nc;
        b = nb;
        f = nf_vals;
        momentum = m_next;
        current = next;
    }
    Ok(KernelAdversary {
        kernel: kernel.clone(),
        anchors: x.clone(),
        coef: c,
        bias: b,
        reg: cfg.reg,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    /// Passes over the training data.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 128,
            lr: 0.05,
            epochs: 2_000,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// `D -> hidden (ReLU) -> 1` logistic classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAdversary {
    /// `hidden x D`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl Adversary for MlpAdversary {
    fn scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.w1.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.w1.ncols(),
                got: x.ncols(),
            });
        }
        Ok(self.forward(x).1)
    }
}

impl MlpAdversary {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        MlpAdversary {
            w1: DMatrix::from_fn(hidden, input_dim, |_, _| rng.random_range(-l1..=l1)),
            b1: DVector::zeros(hidden),
            w2: DVector::from_fn(hidden, |_, _| rng.random_range(-l2..=l2)),
            b2: 0.0,
        }
    }

    /// Hidden activations (`N x hidden`) and output logits.
    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = x * self.w1.transpose();
        for mut row in h.row_iter_mut() {
            row += self.b1.transpose();
            row.apply(|v| *v = v.max(0.0));
        }
        let s = (&h * &self.w2).add_scalar(self.b2);
        (h, s)
    }

    /// Mean logistic loss over the rows and its gradient, laid out like
    /// [`parameters`](Self::parameters).
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &[bool]) -> (f64, Vec<f64>) {
        let g = self.gradient(x, y);
        (g.0, g.1.parameters())
    }

    fn gradient(&self, x: &DMatrix<f64>, y: &[bool]) -> (f64, MlpAdversary) {
        let n = x.nrows() as f64;
        let (h, s) = self.forward(x);
        let loss = s
            .iter()
            .zip(y)
            .map(|(&si, &yi)| logistic_loss(yi, si))
            .sum::<f64>()
            / n;
        let ds = DVector::from_iterator(
            y.len(),
            s.iter()
                .zip(y)
                .map(|(&si, &yi)| (sigmoid(si) - yi as u8 as f64) / n),
        );
        let w2 = h.tr_mul(&ds);
        let b2 = ds.sum();
        let mut dh = &ds * self.w2.transpose();
        dh.zip_apply(&h, |d, hv| {
            if hv <= 0.0 {
                *d = 0.0
            }
        });
        let w1 = dh.tr_mul(x);
        let b1 = dh.row_sum().transpose();
        (loss, MlpAdversary { w1, b1, w2, b2 })
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        p.extend_from_slice(self.w1.as_slice());
        p.extend_from_slice(self.b1.as_slice());
        p.extend_from_slice(self.w2.as_slice());
        p.push(self.b2);
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        let expected = self.w1.len() + 2 * self.b1.len() + 1;
        if p.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: p.len(),
            });
        }
        let (a, rest) = p.split_at(self.w1.len());
        self.w1.as_mut_slice().copy_from_slice(a);
        let (a, rest) = rest.split_at(self.b1.len());
        self.b1.as_mut_slice().copy_from_slice(a);
        let (a, rest) = rest.split_at(self.w2.len());
        self.w2.as_mut_slice().copy_from_slice(a);
        self.b2 = rest[0];
        Ok(())
    }

    fn descend(&mut self, g: &MlpAdversary, lr: f64) {
        self.w1 -= &g.w1 * lr;
        self.b1 -= &g.b1 * lr;
        self.w2 -= &g.w2 * lr;
        self.b2 -= g.b2 * lr;
    }
}

/// Minibatch SGD on the logistic loss, reshuffling every epoch.
pub fn fit_mlp(x: &DMatrix<f64>, y: &[bool], cfg: &MlpConfig) -> Result<MlpAdversary> {
    check_labels(x, y)?;
    if cfg.hidden == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(
            "MLP hidden size, batch size and learning rate must be positive".into(),
        ));
    }
    let (n, d) = x.shape();
    let mut net = MlpAdversary::new(d, cfg.hidden, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let bx = DMatrix::from_fn(chunk.len(), d, |i, j| x[(chunk[i], j)]);
            let by: Vec<bool> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, g) = net.gradient(&bx, &by);
            if !loss.is_finite() {
                return Err(Error::Divergence { step: epoch });
            }
            net.descend(&g, cfg.lr);
        }
    }
    Ok(net)
}

/// A column of the transfer table.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversarySpec {
    Kernel(KernelSpec),
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryColumn {
    pub label: String,
    pub spec: AdversarySpec,
}

/// The adversaries of the cross-kernel transfer experiment: rbf `gamma=0.3`,
/// poly `d=3 gamma=0.5 alpha=0.3`, laplace `gamma=0.3`, sigmoid
/// `alpha=0 gamma=0.01`, linear, their uniform combination, and the MLP.
pub fn transfer_adversaries() -> Vec<AdversaryColumn> {
    let rbf = KernelSpec::Rbf { gamma: 0.3 };
    let poly = KernelSpec::Poly {
        gamma: 0.5,
        alpha_offset: 0.3,
        degree: 3,
    };
    let laplace = KernelSpec::Laplace { gamma: 0.3 };
    let sigmoid = KernelSpec::Sigmoid {
        gamma: 0.01,
        alpha_offset: 0.0,
    };
    let linear = KernelSpec::Linear;
    let all = [
        poly.clone(),
        rbf.clone(),
        laplace.clone(),
        linear.clone(),
        sigmoid.clone(),
    ];
    let combo = uniform(&all).expect("fixed kernels combine");
    let col = |label: &str, spec: AdversarySpec| AdversaryColumn {
        label: label.into(),
        spec,
    };
    vec![
        col("Poly", AdversarySpec::Kernel(poly)),
        col("RBF", AdversarySpec::Kernel(rbf)),
        col("Laplace", AdversarySpec::Kernel(laplace)),
        col("Linear", AdversarySpec::Kernel(linear)),
        col("Sigmoid", AdversarySpec::Kernel(sigmoid)),
        col("UniformMK", AdversarySpec::Kernel(combo)),
        col("MLP", AdversarySpec::Mlp),
    ]
}

/// Pre-images produced by one neutralization run.
#[derive(Debug, Clone, PartialEq)]
pub struct PreimageRun {
    pub train: DMatrix<f64>,
    pub test: DMatrix<f64>,
}

/// All runs (typically one per seed) of one neutralizer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralizedSet {
    pub label: String,
    pub runs: Vec<PreimageRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub kernel: KernelConfig,
    pub mlp: MlpConfig,
    /// MLP seeds averaged within each run.
    pub mlp_seeds: Vec<u64>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            kernel: KernelConfig::default(),
            mlp: MlpConfig::default(),
            mlp_seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
}

impl Cell {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Cell {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[row][column]`.
    pub cells: Vec<Vec<Cell>>,
}

/// Test accuracy of one adversary on one run.
pub fn adversary_accuracy(
    spec: &AdversarySpec,
    run: &PreimageRun,
    y_train: &[bool],
    y_test: &[bool],
    cfg: &TransferConfig,
) -> Result<f64> {
    match spec {
        AdversarySpec::Kernel(kernel) => {
            let adv = fit_kernel(&run.train, y_train, kernel, &cfg.kernel)?;
            accuracy(&adv, &run.test, y_test)
        }
        AdversarySpec::Mlp => {
            if cfg.mlp_seeds.is_empty() {
                return Err(Error::InvalidArgument("no MLP seeds configured".into()));
            }
            let mut total = 0.0;
            for &seed in &cfg.mlp_seeds {
                let mlp = fit_mlp(
                    &run.train,
                    y_train,
                    &MlpConfig {
                        seed,
                        ..cfg.mlp.clone()
                    },
                )?;
                total += accuracy(&mlp, &run.test, y_test)?;
            }
            Ok(total / cfg.mlp_seeds.len() as f64)
        }
    }
}

/// Trains every adversary on every neutralizer's pre-images and reports
/// test accuracy as mean and standard deviation over runs.
pub fn transfer_matrix(
    sets: &[NeutralizedSet],
    adversaries: &[AdversaryColumn],
    y_train: &[bool],
    y_test: &[bool],
    cfg: &TransferConfig,
) -> Result<TransferTable> {
    if sets.is_empty() || adversaries.is_empty() {
        return Err(Error::Empty("transfer table needs rows and columns".into()));
    }
    let mut cells = Vec::with_capacity(sets.len());
    for set in sets {
        if set.runs.is_empty() {
            return Err(Error::Empty(format!(
                "no pre-images for neutralizer {}",
                set.label
            )));
        }
        for run in &set.runs {
            if run.train.nrows() != y_train.len() || run.test.nrows() != y_test.len() {
                return Err(Error::DimensionMismatch {
                    expected: y_train.len() + y_test.len(),
                    got: run.train.nrows() + run.test.nrows(),
                });
            }
        }
        let mut row = Vec::with_capacity(adversaries.len());
        for adv in adversaries {
            let values = set
                .runs
                .iter()
                .map(|run| adversary_accuracy(&adv.spec, run, y_train, y_test, cfg))
                .collect::<Result<Vec<_>>>()?;
            log::info!("{} vs {}: {:?}", set.label, adv.label, values);
            row.push(Cell::from_values(&values));
        }
        cells.push(row);
    }
    Ok(TransferTable {
        rows: sets.iter().map(|s| s.label.clone()).collect(),
        columns: adversaries.iter().map(|a| a.label.clone()).collect(),
        cells,
    })
}

impl TransferTable {
    pub fn cell(&self, row: &str, column: &str) -> Option<Cell> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.columns.iter().position(|c| c == column)?;
        Some(self.cells[i][j])
    }

    /// Tab-separated: a header row, then one row per neutralizer with
    /// `mean` and `std` columns for each adversary.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("neutralizer");
        for c in &self.columns {
            let _ = write!(out, "\t{c}_mean\t{c}_std");
        }
        out.push('\n');
        for (label, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(label);
            for cell in row {
                let _ = write!(out, "\t{:.4}\t{:.4}", cell.mean, cell.std);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("|");
        for c in &self.columns {
            let _ = write!(out, " | {c}");
        }
        out.push_str(" |\n|---");
        out.push_str(&"|---".repeat(self.columns.len()));
        out.push_str("|\n");
        for (label, row) in self.rows.iter().zip(&self.cells) {
            let _ = write!(out, "| {label}");
            for cell in row {
                let _ = write!(out, " | {:.2} ± {:.2}", cell.mean, cell.std);
            }
            out.push_str(" |\n");
        }
        out
    }
}
