//! Oracles shared by the integration tests. Everything here is written
//! independently of the library code it checks.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Feature = SVector<f64, 6>;

/// Explicit feature map of `(gamma x.y + a)^2` on `R^2`.
pub fn poly2(gamma: f64, a: f64, x: &[f64]) -> Feature {
    let r2 = 2f64.sqrt();
    let c = (2.0 * gamma * a).sqrt();
    Feature::from([
        gamma * x[0] * x[0],
        gamma * x[1] * x[1],
        r2 * gamma * x[0] * x[1],
        c * x[0],
        c * x[1],
        a,
    ])
}

/// `<theta, (I - w w^T / |w|^2) phi(z)>` with `w`, `theta` spanned by the anchors.
pub fn explicit_project_predict(
    gamma: f64,
    a: f64,
    anchors: &DMatrix<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    z: &[f64],
) -> f64 {
    let mut w = Feature::zeros();
    let mut theta = Feature::zeros();
    for n in 0..anchors.nrows() {
        let f = poly2(gamma, a, &[anchors[(n, 0)], anchors[(n, 1)]]);
        w += f * alpha[n];
        theta += f * beta[n];
    }
    let phi = poly2(gamma, a, z);
    theta.dot(&(phi - w * (w.dot(&phi) / w.dot(&w))))
}

pub fn logistic(y: bool, s: f64) -> f64 {
    (1.0 + s.exp()).ln() - if y { s } else { 0.0 }
}

/// A random instance: anchors, dual coefficients, query points and labels.
pub struct GameInstance {
    pub gamma: f64,
    pub a: f64,
    pub anchors: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub z: DMatrix<f64>,
    pub labels: Vec<bool>,
}

pub fn game_instance(seed: u64) -> GameInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=20);
    let m = rng.random_range(1..=10);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let gamma = u(0.2, 2.0);
    let a = u(0.1, 2.0);
    let anchors = DMatrix::from_fn(n, 2, |_, _| u(-1.0, 1.0));
    let alpha = DVector::from_fn(n, |_, _| u(-1.0, 1.0));
    let beta = DVector::from_fn(n, |_, _| u(-1.0, 1.0));
    let z = DMatrix::from_fn(m, 2, |_, _| u(-1.0, 1.0));
    let labels = (0..m).map(|_| rng.random::<bool>()).collect();
    GameInstance {
        gamma,
        a,
        anchors,
        alpha,
        beta,
        z,
        labels,
    }
}

/// Random symmetric matrix with entries of order `scale`.
pub fn random_symmetric(r: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(r, r, |_, _| rng.random_range(-scale..scale));
    (&m + m.transpose()) * 0.5
}

/// A random point of the Fantope: `Q diag(l) Q^T` with `l` in `[0,1]`,
/// summing to `k`.
pub fn random_fantope_point(r: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0))
        .qr()
        .q();
    // Water-fill random weights until they sum to k without leaving [0, 1].
    let raw: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..1.0)).collect();
    let (mut lo, mut hi) = (0.0, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = raw.iter().map(|v| (v * mid).min(1.0)).sum();
        if s < k as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut l: Vec<f64> = raw.iter().map(|v| (v * lo).min(1.0)).collect();
    let gap = k as f64 - l.iter().sum::<f64>();
    if let Some(slot) = l.iter_mut().find(|v| **v + gap <= 1.0 && **v + gap >= 0.0) {
        *slot += gap;
    }
    &q * DMatrix::from_diagonal(&DVector::from_vec(l)) * q.transpose()
}

/// Relative error `|g - fd| / |fd|` between an analytic gradient and
/// central differences of `f` around `p` (step `1e-6`).
pub fn fd_relative_error(p: &[f64], g: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut q = p.to_vec();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let up = f(&q);
        q[i] = p[i] - h;
        let down = f(&q);
        q[i] = p[i];
        let fd = (up - down) / (2.0 * h);
        num += (g[i] - fd).powi(2);
        den += fd * fd;
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

/// Gradient check of the pre-image loss on a small random net with
/// perturbed weights, dropout off.
pub fn preimage_gradient_error(seed: u64) -> f64 {
    use kce_core::kernels::KernelSpec;
    use kce_core::nystrom;
    use kce_core::preimage::{loss_and_gradient, mean_loss, PreimageNet};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=4);
    let kernel = match seed % 3 {
        0 => KernelSpec::rbf(rng.random_range(0.2..2.0)).unwrap(),
        1 => KernelSpec::poly(rng.random_range(0.2..1.0), 0.5, 3).unwrap(),
        _ => kce_core::kernels::uniform(&[
            KernelSpec::rbf(0.5).unwrap(),
            KernelSpec::poly(0.5, 1.0, 2).unwrap(),
            KernelSpec::Linear,
        ])
        .unwrap(),
    };
    let x = DMatrix::from_fn(12, d, |_, _| rng.random_range(-1.0..1.0));
    let map = nystrom::fit(&x, &kernel, 8, seed).unwrap();
    let r = map.rank();
    let w = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0)).normalize();
    let p = DMatrix::identity(r, r) - &w * w.transpose();
    let mut net = PreimageNet::with_sizes(d, 7, 5, 0.1, seed).unwrap();
    let params: Vec<f64> = net
        .parameters()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    net.set_parameters(&params).unwrap();
    let batch = x.rows(0, 6).into_owned();
    let (_, g) = loss_and_gradient(&net, &batch, &p, &map, None).unwrap();
    let mut probe = net.clone();
    fd_relative_error(&params, &g, |q| {
        probe.set_parameters(q).unwrap();
        mean_loss(&probe, &batch, &p, &map).unwrap()
    })
}

/// Gradient check of the MLP adversary's mean logistic loss.
pub fn mlp_gradient_error(seed: u64) -> f64 {
    use kce_core::adversaries::MlpAdversary;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=5);
    let x = DMatrix::from_fn(15, d, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<bool> = (0..15).map(|_| rng.random::<bool>()).collect();
    let mut net = MlpAdversary::new(d, 9, seed);
    net.b1 = DVector::from_fn(9, |_, _| rng.random_range(-0.2..0.2));
    let params = net.parameters();
    let (_, g) = net.loss_and_gradient(&x, &y);
    let mut probe = net.clone();
    fd_relative_error(&params, &g, |q| {
        probe.set_parameters(q).unwrap();
        probe.loss_and_gradient(&x, &y).0
    })
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// WEAT effect size and exact one-sided p-value, by enumerating bitmasks.
pub fn weat_oracle(x: &[Vec<f64>], y: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
    let s = |w: &Vec<f64>| {
        a.iter().map(|u| cos(w, u)).sum::<f64>() / a.len() as f64
            - b.iter().map(|u| cos(w, u)).sum::<f64>() / b.len() as f64
    };
    let sx: Vec<f64> = x.iter().map(s).collect();
    let sy: Vec<f64> = y.iter().map(s).collect();
    let all: Vec<f64> = sx.iter().chain(&sy).copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mx = sx.iter().sum::<f64>() / sx.len() as f64;
    let my = sy.iter().sum::<f64>() / sy.len() as f64;
    let d = (mx - my) / sd;
    let observed: f64 = sx.iter().sum::<f64>() - sy.iter().sum::<f64>();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << all.len()) {
        if mask.count_ones() as usize != sx.len() {
            continue;
        }
        let stat: f64 = all
            .iter()
            .enumerate()
            .map(|(i, v)| if mask >> i & 1 == 1 { *v } else { -*v })
            .sum();
        total += 1;
        if stat >= observed - 1e-12 {
            hits += 1;
        }
    }
    (d, hits as f64 / total as f64)
}
