//! Pre-image network: an MLP with a skip connection that reproduces in input
//! space what a feature-space projection does.
//!
//! For a projection `P` acting on Nystrom features `phi`, the network `f` is
//! trained to minimize
//!
//! ```text
//! |P phi(x) - phi(f(x))|^2 + |(I - P) phi(f(x))|^2
//! ```
//!
//! The architecture is `D -> h1 -> h2 -> D`, each hidden layer being
//! affine, layer norm, ReLU and dropout, and the output is `x + net(x)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::rows_of;
use crate::nystrom::NystromMap;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Affine {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Affine {
            weight: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit)),
            bias: DVector::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Affine {
            weight: DMatrix::zeros(fan_out, fan_in),
            bias: DVector::zeros(fan_out),
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.weight.transpose();
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: DVector<f64>,
    pub bias: DVector<f64>,
}

impl LayerNorm {
    fn new(n: usize) -> Self {
        LayerNorm {
            gain: DVector::from_element(n, 1.0),
            bias: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreimageNet {
    pub hidden1: Affine,
    pub norm1: LayerNorm,
    pub hidden2: Affine,
    pub norm2: LayerNorm,
    pub output: Affine,
    pub dropout: f64,
}

/// Activations kept for the backward pass.
struct Cache {
    xhat1: DMatrix<f64>,
    inv_std1: Vec<f64>,
    y1: DMatrix<f64>,
    mask1: DMatrix<f64>,
    a1: DMatrix<f64>,
    xhat2: DMatrix<f64>,
    inv_std2: Vec<f64>,
    y2: DMatrix<f64>,
    mask2: DMatrix<f64>,
    a2: DMatrix<f64>,
}

fn check_finite(m: &DMatrix<f64>, layer: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(layer))
    }
}

fn layer_norm(z: &DMatrix<f64>, ln: &LayerNorm) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (b, n) = z.shape();
    let mut xhat = DMatrix::zeros(b, n);
    let mut inv_std = Vec::with_capacity(b);
    for i in 0..b {
        let row = z.row(i);
        let mean = row.mean();
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(s);
        for j in 0..n {
            xhat[(i, j)] = (z[(i, j)] - mean) * s;
        }
    }
    let y = DMatrix::from_fn(b, n, |i, j| xhat[(i, j)] * ln.gain[j] + ln.bias[j]);
    (xhat, inv_std, y)
}

/// Backward pass of layer norm for the normalized activations `xhat`.
fn layer_norm_backward(dxhat: &DMatrix<f64>, xhat: &DMatrix<f64>, inv_std: &[f64]) -> DMatrix<f64> {
    let (b, n) = dxhat.shape();
    let mut dz = DMatrix::zeros(b, n);
    for i in 0..b {
        let mean_d = dxhat.row(i).mean();
        let mean_dx = dxhat.row(i).dot(&xhat.row(i)) / n as f64;
        for j in 0..n {
            dz[(i, j)] = inv_std[i] * (dxhat[(i, j)] - mean_d - xhat[(i, j)] * mean_dx);
        }
    }
    dz
}

fn dropout_mask(b: usize, n: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> DMatrix<f64> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            DMatrix::from_fn(b, n, |_, _| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
        }
        _ => DMatrix::from_element(b, n, 1.0),
    }
}

impl PreimageNet {
    /// Hidden sizes 512 and 300, dropout 0.1.
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        Self::with_sizes(input_dim, 512, 300, 0.1, seed)
    }

    /// Glorot-uniform hidden layers, zero biases, unit layer-norm gains and a
    /// zero output layer, so a fresh net is the identity map.
    pub fn with_sizes(
        input_dim: usize,
        hidden1: usize,
        hidden2: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden1 == 0 || hidden2 == 0 {
            return Err(Error::InvalidArgument(
                "layer sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {dropout}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PreimageNet {
            hidden1: Affine::glorot(input_dim, hidden1, &mut rng),
            norm1: LayerNorm::new(hidden1),
            hidden2: Affine::glorot(hidden1, hidden2, &mut rng),
            norm2: LayerNorm::new(hidden2),
            output: Affine::zeros(hidden2, input_dim),
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden1.weight.ncols()
    }

    pub fn hidden_sizes(&self) -> (usize, usize) {
        (self.hidden1.weight.nrows(), self.hidden2.weight.nrows())
    }

    fn forward_cached(
        &self,
        x: &DMatrix<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(DMatrix<f64>, Cache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        check_finite(x, "input")?;
        let b = x.nrows();
        let (h1, h2) = self.hidden_sizes();
        let z1 = self.hidden1.apply(x);
        check_finite(&z1, "hidden1")?;
        let (xhat1, inv_std1, y1) = layer_norm(&z1, &self.norm1);
        check_finite(&y1, "norm1")?;
        let mask1 = dropout_mask(b, h1, self.dropout, rng.as_deref_mut());
        let a1 = y1.zip_map(&mask1, |v, m| v.max(0.0) * m);
        let z2 = self.hidden2.apply(&a1);
        check_finite(&z2, "hidden2")?;
        let (xhat2, inv_std2, y2) = layer_norm(&z2, &self.norm2);
        check_finite(&y2, "norm2")?;
        let mask2 = dropout_mask(b, h2, self.dropout, rng);
        let a2 = y2.zip_map(&mask2, |v, m| v.max(0.0) * m);
        let out = x + self.output.apply(&a2);
        check_finite(&out, "output")?;
        let cache = Cache {
            xhat1,
            inv_std1,
            y1,
            mask1,
            a1,
            xhat2,
            inv_std2,
            y2,
            mask2,
            a2,
        };
        Ok((out, cache))
    }

    /// Applies the net to every row of `x`. Dropout is active only in
    /// `train_mode`, with masks drawn from `seed`.
    pub fn forward_rows(
        &self,
        x: &DMatrix<f64>,
        train_mode: bool,
        seed: u64,
    ) -> Result<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = if train_mode { Some(&mut rng) } else { None };
        Ok(self.forward_cached(x, rng)?.0)
    }

    pub fn forward(&self, x: &[f64], train_mode: bool, seed: u64) -> Result<DVector<f64>> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        let out = self.forward_rows(&m, train_mode, seed)?;
        Ok(out.row(0).transpose())
    }

    /// Parameter gradients given `d loss / d output` for every row.
    fn backward(&self, x: &DMatrix<f64>, c: &Cache, dout: &DMatrix<f64>) -> PreimageNet {
        let d_output = Affine {
            weight: dout.tr_mul(&c.a2),
            bias: dout.row_sum().transpose(),
        };
        let da2 = dout * &self.output.weight;
        let dy2 = DMatrix::from_fn(da2.nrows(), da2.ncols(), |i, j| {
            if c.y2[(i, j)] > 0.0 {
                da2[(i, j)] * c.mask2[(i, j)]
            } else {
                0.0
            }
        });
        let d_norm2 = LayerNorm {
            gain: dy2.component_mul(&c.xhat2).row_sum().transpose(),
            bias: dy2.row_sum().transpose(),
        };
        let dxhat2 = DMatrix::from_fn(dy2.nrows(), dy2.ncols(), |i, j| {
            dy2[(i, j)] * self.norm2.gain[j]
        });
        let dz2 = layer_norm_backward(&dxhat2, &c.xhat2, &c.inv_std2);
        let d_hidden2 = Affine {
            weight: dz2.tr_mul(&c.a1),
            bias: dz2.row_sum().transpose(),
        };
        let da1 = &dz2 * &self.hidden2.weight;
        let dy1 = DMatrix::from_fn(da1.nrows(), da1.ncols(), |i, j| {
            if c.y1[(i, j)] > 0.0 {
                da1[(i, j)] * c.mask1[(i, j)]
            } else {
                0.0
            }
        });
        let d_norm1 = LayerNorm {
            gain: dy1.component_mul(&c.xhat1).row_sum().transpose(),
            bias: dy1.row_sum().transpose(),
        };
        let dxhat1 = DMatrix::from_fn(dy1.nrows(), dy1.ncols(), |i, j| {
            dy1[(i, j)] * self.norm1.gain[j]
        });
        let dz1 = layer_norm_backward(&dxhat1, &c.xhat1, &c.inv_std1);
        let d_hidden1 = Affine {
            weight: dz1.tr_mul(x),
            bias: dz1.row_sum().transpose(),
        };
        PreimageNet {
            hidden1: d_hidden1,
            norm1: d_norm1,
            hidden2: d_hidden2,
            norm2: d_norm2,
            output: d_output,
            dropout: self.dropout,
        }
    }

    fn tensors(&self) -> [&[f64]; 10] {
        [
            self.hidden1.weight.as_slice(),
            self.hidden1.bias.as_slice(),
            self.norm1.gain.as_slice(),
            self.norm1.bias.as_slice(),
            self.hidden2.weight.as_slice(),
            self.hidden2.bias.as_slice(),
            self.norm2.gain.as_slice(),
            self.norm2.bias.as_slice(),
            self.output.weight.as_slice(),
            self.output.bias.as_slice(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.hidden1.weight.as_mut_slice(),
            self.hidden1.bias.as_mut_slice(),
            self.norm1.gain.as_mut_slice(),
            self.norm1.bias.as_mut_slice(),
            self.hidden2.weight.as_mut_slice(),
            self.hidden2.bias.as_mut_slice(),
            self.norm2.gain.as_mut_slice(),
            self.norm2.bias.as_mut_slice(),
            self.output.weight.as_mut_slice(),
            self.output.bias.as_mut_slice(),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters flattened in a fixed order (layer by layer, matrices
    /// column-major).
    pub fn parameters(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.num_parameters(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&params[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += scale * other`, parameter by parameter.
    fn axpy(&mut self, scale: f64, other: &PreimageNet) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn check_projection(p: &DMatrix<f64>, map: &NystromMap) -> Result<()> {
    let r = map.rank();
    if p.nrows() != r || p.ncols() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            got: if p.nrows() != r { p.nrows() } else { p.ncols() },
        });
    }
    Ok(())
}

/// Per-row losses and `d loss / d phi(f(x))`.
fn feature_loss(
    target: &DMatrix<f64>,
    phi_out: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> (Vec<f64>, DMatrix<f64>) {
    let diff = phi_out - target;
    let kept = phi_out * q.transpose();
    let losses = (0..diff.nrows())
        .map(|i| diff.row(i).norm_squared() + kept.row(i).norm_squared())
        .collect();
    let grad = (diff + kept * q) * 2.0;
    (losses, grad)
}

/// Loss of a single point.
pub fn loss(net: &PreimageNet, x: &[f64], p: &DMatrix<f64>, map: &NystromMap) -> Result<f64> {
    let m = DMatrix::from_row_slice(1, x.len(), x);
    Ok(point_losses(net, &m, p, map)?[0])
}

/// Loss of every row of `x`, dropout off.
pub fn point_losses(
    net: &PreimageNet,
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    map: &NystromMap,
) -> Result<Vec<f64>> {
    check_projection(p, map)?;
    let target = map.transform_rows(x)? * p.transpose();
    let out = net.forward_rows(x, false, 0)?;
    let phi_out = map.transform_rows(&out)?;
    let q = DMatrix::identity(p.nrows(), p.nrows()) - p;
    Ok(feature_loss(&target, &phi_out, &q).0)
}

pub fn mean_loss(
    net: &PreimageNet,
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    map: &NystromMap,
) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::Empty("pre-image evaluation set".into()));
    }
    let l = point_losses(net, x, p, map)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

/// Mean loss over the rows of `x` and its gradient w.r.t.
/// [`PreimageNet::parameters`]. `dropout_seed` enables dropout.
pub fn loss_and_gradient(
    net: &PreimageNet,
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    map: &NystromMap,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<f64>)> {
    let (l, g) = batch_gradient(net, x, p, map, dropout_seed)?;
    Ok((l, g.parameters()))
}

fn batch_gradient(
    net: &PreimageNet,
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    map: &NystromMap,
    dropout_seed: Option<u64>,
) -> Result<(f64, PreimageNet)> {
    check_projection(p, map)?;
    if x.nrows() == 0 {
        return Err(Error::Empty("pre-image batch".into()));
    }
    let target = map.transform_rows(x)? * p.transpose();
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let (out, cache) = net.forward_cached(x, rng.as_mut())?;
    let phi_out = map.transform_rows(&out)?;
    let q = DMatrix::identity(p.nrows(), p.nrows()) - p;
    let (losses, dphi) = feature_loss(&target, &phi_out, &q);
    let n = x.nrows() as f64;
    let dout = map.transform_vjp_rows(&rows_of(&out), &(dphi / n));
    let grads = net.backward(x, &cache, &dout);
    Ok((losses.iter().sum::<f64>() / n, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreimageConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub total_batches: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for PreimageConfig {
    fn default() -> Self {
        PreimageConfig {
            lr: 0.01,
            batch_size: 128,
            total_batches: 15_000,
            eval_every: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreimageTraining {
    pub net: PreimageNet,
    /// `(batch, mean dev loss)`, starting with the untrained net at batch 0.
    pub history: Vec<(usize, f64)>,
    pub selected_step: usize,
}

/// Minibatch SGD on the training rows, keeping the checkpoint with the
/// lowest mean dev loss (the initial net included, earliest on ties).
pub fn train(
    net: &PreimageNet,
    x_train: &DMatrix<f64>,
    x_dev: &DMatrix<f64>,
    p: &DMatrix<f64>,
    map: &NystromMap,
    cfg: &PreimageConfig,
) -> Result<PreimageTraining> {
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(
            "pre-image learning rate must be positive".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::InvalidArgument(
            "pre-image batch size and eval cadence must be positive".into(),
        ));
    }
    let n = x_train.nrows();
    if n == 0 {
        return Err(Error::Empty("pre-image training set".into()));
    }
    let batch_size = cfg.batch_size.min(n);
    let mut current = net.clone();
    let mut best = current.clone();
    let mut best_loss = mean_loss(&current, x_dev, p, map)?;
    let mut selected_step = 0;
    let mut history = vec![(0, best_loss)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut batch = DMatrix::zeros(batch_size, x_train.ncols());
    for step in 1..=cfg.total_batches {
        if cursor + batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        for (row, &i) in order[cursor..cursor + batch_size].iter().enumerate() {
            batch.set_row(row, &x_train.row(i));
        }
        cursor += batch_size;
        let mask_seed = cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (l, grads) = batch_gradient(&current, &batch, p, map, Some(mask_seed))?;
        if !l.is_finite() {
            return Err(Error::Divergence { step });
        }
        current.axpy(-cfg.lr, &grads);
        if !current.is_finite() {
            return Err(Error::Divergence { step });
        }
        if step % cfg.eval_every == 0 || step == cfg.total_batches {
            let dev = mean_loss(&current, x_dev, p, map)?;
            if !dev.is_finite() {
                return Err(Error::Divergence { step });
            }
            log::debug!("pre-image step {step}: train {l:.3e}, dev {dev:.3e}");
            history.push((step, dev));
            if dev < best_loss {
                best_loss = dev;
                best = current.clone();
                selected_step = step;
            }
        }
    }
    Ok(PreimageTraining {
        net: best,
        history,
        selected_step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionError {
    /// Mean over evaluated points, in percent.
    pub mean_percent: f64,
    /// Per-point values in percent, for the evaluated points.
    pub per_point: Vec<f64>,
    /// Points with `|P phi(x)| <= 1e-12`.
    pub skipped: usize,
}

/// `100 * |P phi(x) - phi(f(x))|^2 / |P phi(x)|^2`, averaged over the rows
/// of `x` whose projected features do not vanish.
pub fn relative_reconstruction_error(
    net: &PreimageNet,
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    map: &NystromMap,
) -> Result<ReconstructionError> {
    check_projection(p, map)?;
    let target = map.transform_rows(x)? * p.transpose();
    let out = net.forward_rows(x, false, 0)?;
    let phi_out = map.transform_rows(&out)?;
    let mut per_point = Vec::new();
    let mut skipped = 0;
    for i in 0..x.nrows() {
        let denom = target.row(i).norm();
        if denom <= 1e-12 {
            skipped += 1;
            continue;
        }
        let num = (phi_out.row(i) - target.row(i)).norm_squared();
        per_point.push(100.0 * num / (denom * denom));
    }
    if per_point.is_empty() {
        return Err(Error::Empty(
            "every point has vanishing projected features".into(),
        ));
    }
    let mean_percent = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(ReconstructionError {
        mean_percent,
        per_point,
        skipped,
    })
}
