//! Kernel families, their input-space gradients and Gram matrices.
//!
//! A [`KernelSpec`] has a flat text form used in config files and report
//! headers:
//!
//! ```text
//! linear
//! poly gamma=0.1 alpha=1 d=3
//! rbf gamma=0.2
//! laplace gamma=0.15
//! sigmoid gamma=0.005 alpha=0
//! combination uniform(linear,rbf[gamma=0.2],poly[gamma=0.1 alpha=1 d=2])
//! combination weighted(0.25:linear,0.75:rbf[gamma=0.2])
//! ```
//!
//! Numbers are printed with the shortest representation that parses back to
//! the same `f64`, so `parse(display(spec)) == spec` exactly.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{dot, rows_of};

/// Weights of a combination must sum to one within this tolerance.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `x . y`
    Linear,
    /// `(gamma x . y + alpha_offset)^degree`
    Poly {
        gamma: f64,
        alpha_offset: f64,
        degree: u32,
    },
    /// `exp(-gamma |x - y|_2^2)`
    Rbf { gamma: f64 },
    /// `exp(-gamma |x - y|_1)`
    Laplace { gamma: f64 },
    /// `tanh(gamma x . y + alpha_offset)`
    Sigmoid { gamma: f64, alpha_offset: f64 },
    /// Convex combination of non-combination kernels.
    Combination(Vec<(f64, KernelSpec)>),
}

impl KernelSpec {
    pub fn poly(gamma: f64, alpha_offset: f64, degree: u32) -> Result<Self> {
        let k = KernelSpec::Poly {
            gamma,
            alpha_offset,
            degree,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        let k = KernelSpec::Rbf { gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn laplace(gamma: f64) -> Result<Self> {
        let k = KernelSpec::Laplace { gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn sigmoid(gamma: f64, alpha_offset: f64) -> Result<Self> {
        let k = KernelSpec::Sigmoid {
            gamma,
            alpha_offset,
        };
        k.validate()?;
        Ok(k)
    }

    /// Family name as used in the text form and in report rows.
    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Poly { .. } => "poly",
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Laplace { .. } => "laplace",
            KernelSpec::Sigmoid { .. } => "sigmoid",
            KernelSpec::Combination(_) => "combination",
        }
    }

    /// Whether every Gram matrix of this kernel is positive semidefinite.
    pub fn is_psd(&self) -> bool {
        match self {
            KernelSpec::Sigmoid { .. } => false,
            KernelSpec::Combination(parts) => parts.iter().all(|(_, k)| k.is_psd()),
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, g: f64| {
            if g.is_finite() && g > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidKernel(format!(
                    "{name} requires gamma > 0, got {g}"
                )))
            }
        };
        match self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Poly {
                gamma,
                alpha_offset,
                degree,
            } => {
                positive("poly", *gamma)?;
                if !(alpha_offset.is_finite() && *alpha_offset >= 0.0) {
                    return Err(Error::InvalidKernel(format!(
                        "poly requires alpha >= 0, got {alpha_offset}"
                    )));
                }
                if *degree < 1 {
                    return Err(Error::InvalidKernel("poly requires d >= 1".into()));
                }
                Ok(())
            }
            KernelSpec::Rbf { gamma } => positive("rbf", *gamma),
            KernelSpec::Laplace { gamma } => positive("laplace", *gamma),
            KernelSpec::Sigmoid {
                gamma,
                alpha_offset,
            } => {
                positive("sigmoid", *gamma)?;
                if !(alpha_offset.is_finite() && *alpha_offset >= 0.0) {
                    return Err(Error::InvalidKernel(format!(
                        "sigmoid requires alpha >= 0, got {alpha_offset}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Combination(parts) => {
                if parts.is_empty() {
                    return Err(Error::InvalidKernel("empty combination".into()));
                }
                let mut sum = 0.0;
                for (w, k) in parts {
                    if !(w.is_finite() && *w >= 0.0) {
                        return Err(Error::InvalidKernel(format!("bad combination weight {w}")));
                    }
                    if matches!(k, KernelSpec::Combination(_)) {
                        return Err(Error::InvalidKernel("combinations cannot be nested".into()));
                    }
                    k.validate()?;
                    sum += w;
                }
                if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                    return Err(Error::InvalidKernel(format!(
                        "combination weights sum to {sum}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Kernel value without argument checks.
    pub(crate) fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Poly {
                gamma,
                alpha_offset,
                degree,
            } => (gamma * dot(x, y) + alpha_offset).powi(*degree as i32),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Laplace { gamma } => {
                let d1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-gamma * d1).exp()
            }
            KernelSpec::Sigmoid {
                gamma,
                alpha_offset,
            } => (gamma * dot(x, y) + alpha_offset).tanh(),
            KernelSpec::Combination(parts) => parts.iter().map(|(w, k)| w * k.value(x, y)).sum(),
        }
    }

    /// Adds `scale * d kappa(x, y) / dx` into `out`.
    pub(crate) fn add_grad(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            KernelSpec::Linear => axpy(scale, y, out),
            KernelSpec::Poly {
                gamma,
                alpha_offset,
                degree,
            } => {
                let base = gamma * dot(x, y) + alpha_offset;
                let c = *degree as f64 * base.powi(*degree as i32 - 1) * gamma;
                axpy(scale * c, y, out);
            }
            KernelSpec::Rbf { gamma } => {
                let k = self.value(x, y);
                let c = -2.0 * gamma * k * scale;
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o += c * (a - b);
                }
            }
            KernelSpec::Laplace { gamma } => {
                let k = self.value(x, y);
                let c = -gamma * k * scale;
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    // subgradient 0 where the coordinates coincide
                    if a > b {
                        *o += c;
                    } else if a < b {
                        *o -= c;
                    }
                }
            }
            KernelSpec::Sigmoid {
                gamma,
                alpha_offset,
            } => {
                let t = (gamma * dot(x, y) + alpha_offset).tanh();
                axpy(scale * (1.0 - t * t) * gamma, y, out);
            }
            KernelSpec::Combination(parts) => {
                for (w, k) in parts {
                    k.add_grad(x, y, scale * w, out);
                }
            }
        }
    }

    /// Checked kernel evaluation.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_pair(x, y)?;
        Ok(self.value(x, y))
    }

    /// Checked gradient `d kappa(x, y) / dx`.
    pub fn grad(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_pair(x, y)?;
        let mut out = vec![0.0; x.len()];
        self.add_grad(x, y, 1.0, &mut out);
        Ok(out)
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel argument".into()));
    }
    Ok(())
}

/// `kappa(x, y)` for the given spec.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

/// `d kappa(x, y) / dx`; coordinates where a Laplace kernel is not
/// differentiable receive the subgradient 0.
pub fn eval_kernel_grad(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    spec.grad(x, y)
}

/// A kernel matrix over a set of points together with the kernel that made it.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub kernel: KernelSpec,
}

/// Gram matrix of the rows of `x` (an `N x D` matrix).
///
/// Each entry is computed independently from the two rows involved and the
/// lower triangle is mirrored from the upper one, so the result is exactly
/// symmetric.
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<GramMatrix> {
    spec.validate()?;
    if x.nrows() == 0 {
        return Err(Error::Empty("point set".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Gram input rows".into()));
    }
    let rows = rows_of(x);
    Ok(GramMatrix {
        entries: gram_rows(spec, &rows),
        kernel: spec.clone(),
    })
}

pub(crate) fn gram_rows(spec: &KernelSpec, rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.value(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `K[i][j] = kappa(a_i, b_j)`.
pub(crate) fn cross_gram(spec: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| spec.value(&a[i], &b[j]))
}

/// Convex combination of kernels; the weights are renormalized to sum to 1.
pub fn combine(weights: &[f64], specs: &[KernelSpec]) -> Result<KernelSpec> {
    if weights.is_empty() || specs.is_empty() {
        return Err(Error::InvalidKernel("empty combination".into()));
    }
    if weights.len() != specs.len() {
        return Err(Error::DimensionMismatch {
            expected: specs.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidKernel("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidKernel(
            "all combination weights are zero".into(),
        ));
    }
    let parts = weights
        .iter()
        .zip(specs)
        .map(|(w, s)| (w / total, s.clone()))
        .collect();
    // Rescaling can leave the sum a few ulps away from 1; validate uses a
    // tolerance for that reason.
    let k = KernelSpec::Combination(parts);
    k.validate()?;
    Ok(k)
}

/// Uniform combination of the given kernels.
pub fn uniform(specs: &[KernelSpec]) -> Result<KernelSpec> {
    combine(&vec![1.0; specs.len()], specs)
}

/// The hyperparameter grid of the GloVe experiments: 18 poly, 3 rbf,
/// 3 laplace and 4 sigmoid kernels.
pub fn default_grid() -> Vec<KernelSpec> {
    let mut grid = Vec::new();
    for degree in [2, 3] {
        for gamma in [0.05, 0.1, 0.15] {
            for alpha in [0.8, 1.0, 1.2] {
                grid.push(KernelSpec::Poly {
                    gamma,
                    alpha_offset: alpha,
                    degree,
                });
            }
        }
    }
    for gamma in [0.1, 0.15, 0.2] {
        grid.push(KernelSpec::Rbf { gamma });
    }
    for gamma in [0.1, 0.15, 0.2] {
        grid.push(KernelSpec::Laplace { gamma });
    }
    for alpha in [0.0, 0.01] {
        for gamma in [0.005, 0.003] {
            grid.push(KernelSpec::Sigmoid {
                gamma,
                alpha_offset: alpha,
            });
        }
    }
    grid
}

impl KernelSpec {
    fn params(&self) -> String {
        match self {
            KernelSpec::Linear | KernelSpec::Combination(_) => String::new(),
            KernelSpec::Poly {
                gamma,
                alpha_offset,
                degree,
            } => format!("gamma={gamma:?} alpha={alpha_offset:?} d={degree}"),
            KernelSpec::Rbf { gamma } | KernelSpec::Laplace { gamma } => {
                format!("gamma={gamma:?}")
            }
            KernelSpec::Sigmoid {
                gamma,
                alpha_offset,
            } => format!("gamma={gamma:?} alpha={alpha_offset:?}"),
        }
    }

    fn component_text(&self) -> String {
        match self {
            KernelSpec::Linear => "linear".to_string(),
            other => format!("{}[{}]", other.family(), other.params()),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Combination(parts) => {
                let uniform = parts
                    .iter()
                    .all(|(w, _)| w.to_bits() == parts[0].0.to_bits());
                let items: Vec<String> = if uniform {
                    parts.iter().map(|(_, k)| k.component_text()).collect()
                } else {
                    parts
                        .iter()
                        .map(|(w, k)| format!("{w:?}:{}", k.component_text()))
                        .collect()
                };
                let mode = if uniform { "uniform" } else { "weighted" };
                write!(f, "combination {mode}({})", items.join(","))
            }
            other => write!(f, "{} {}", other.family(), other.params()),
        }
    }
}

fn parse_simple(family: &str, params: &str) -> Result<KernelSpec> {
    let mut gamma = None;
    let mut alpha = None;
    let mut degree = None;
    for tok in params.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::InvalidKernel(format!("expected key=value, got `{tok}`")))?;
        let number = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidKernel(format!("bad number `{v}` for {key}")))
        };
        match key {
            "gamma" => gamma = Some(number(value)?),
            "alpha" => alpha = Some(number(value)?),
            "d" => {
                degree = Some(
                    value
                        .parse::<u32>()
                        .map_err(|_| Error::InvalidKernel(format!("bad degree `{value}`")))?,
                )
            }
            _ => return Err(Error::InvalidKernel(format!("unknown parameter `{key}`"))),
        }
    }
    let need_gamma =
        || gamma.ok_or_else(|| Error::InvalidKernel(format!("{family} requires gamma")));
    let spec = match family {
        "linear" => {
            if gamma.is_some() || alpha.is_some() || degree.is_some() {
                return Err(Error::InvalidKernel("linear takes no parameters".into()));
            }
            KernelSpec::Linear
        }
        "poly" => KernelSpec::Poly {
            gamma: need_gamma()?,
            alpha_offset: alpha.unwrap_or(0.0),
            degree: degree.ok_or_else(|| Error::InvalidKernel("poly requires d".into()))?,
        },
        "rbf" => KernelSpec::Rbf {
            gamma: need_gamma()?,
        },
        "laplace" => KernelSpec::Laplace {
            gamma: need_gamma()?,
        },
        "sigmoid" => KernelSpec::Sigmoid {
            gamma: need_gamma()?,
            alpha_offset: alpha.unwrap_or(0.0),
        },
        other => {
            return Err(Error::InvalidKernel(format!(
                "unknown kernel family `{other}`"
            )))
        }
    };
    if !matches!(family, "poly" | "sigmoid") && alpha.is_some() {
        return Err(Error::InvalidKernel(format!("{family} takes no alpha")));
    }
    if family != "poly" && degree.is_some() {
        return Err(Error::InvalidKernel(format!("{family} takes no d")));
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_component(item: &str) -> Result<KernelSpec> {
    let item = item.trim();
    match item.split_once('[') {
        Some((family, rest)) => {
            let params = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::InvalidKernel(format!("unclosed `[` in `{item}`")))?;
            parse_simple(family.trim(), params)
        }
        None => parse_simple(item, ""),
    }
}

fn parse_combination(body: &str) -> Result<KernelSpec> {
    let body = body.trim();
    let (mode, inner) = body
        .split_once('(')
        .ok_or_else(|| Error::InvalidKernel(format!("malformed combination `{body}`")))?;
    let inner = inner
        .strip_suffix(')')
        .ok_or_else(|| Error::InvalidKernel(format!("unclosed `(` in `{body}`")))?;
    let items: Vec<&str> = inner.split(',').collect();
    match mode.trim() {
        "uniform" => {
            let specs = items
                .iter()
                .map(|s| parse_component(s))
                .collect::<Result<Vec<_>>>()?;
            uniform(&specs)
        }
        "weighted" => {
            let mut weights = Vec::new();
            let mut specs = Vec::new();
            for it in items {
                let (w, k) = it.split_once(':').ok_or_else(|| {
                    Error::InvalidKernel(format!("expected weight:kernel, got `{it}`"))
                })?;
                weights.push(
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidKernel(format!("bad weight `{w}`")))?,
                );
                specs.push(parse_component(k)?);
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() <= WEIGHT_SUM_TOLERANCE {
                // keep the written weights bit-for-bit
                let k = KernelSpec::Combination(weights.into_iter().zip(specs).collect());
                k.validate()?;
                Ok(k)
            } else {
                combine(&weights, &specs)
            }
        }
        other => Err(Error::InvalidKernel(format!(
            "unknown combination mode `{other}`"
        ))),
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.split_once(char::is_whitespace) {
            Some((h, r)) => (h, r),
            None => (s, ""),
        };
        if head == "combination" {
            parse_combination(rest)
        } else {
            parse_simple(head, rest)
        }
    }
}
