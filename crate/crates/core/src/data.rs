//! Embedding ingestion, label induction, splitting and a synthetic dataset.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    pub tokens: Vec<String>,
    /// `N x D`, one embedding per row.
    pub x: DMatrix<f64>,
    pub y: Vec<bool>,
    /// Empty until [`split`] assigns one tag per row.
    pub split: Vec<Split>,
    /// A second attribute used to measure collateral damage.
    pub aux: Option<Vec<bool>>,
}

/// One split of a [`LabeledEmbeddings`].
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub tokens: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Vec<bool>,
    pub aux: Option<Vec<bool>>,
}

impl Part {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Accuracy of always predicting the more frequent class.
    pub fn majority_accuracy(&self) -> f64 {
        majority_accuracy(&self.y)
    }
}

pub fn majority_accuracy(y: &[bool]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let pos = y.iter().filter(|&&b| b).count();
    pos.max(y.len() - pos) as f64 / y.len() as f64
}

impl LabeledEmbeddings {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rows tagged `which`, in their original order.
    pub fn part(&self, which: Split) -> Part {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.split.get(i) == Some(&which))
            .collect();
        Part {
            tokens: idx.iter().map(|&i| self.tokens[i].clone()).collect(),
            x: DMatrix::from_fn(idx.len(), self.x.ncols(), |r, c| self.x[(idx[r], c)]),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            aux: self
                .aux
                .as_ref()
                .map(|a| idx.iter().map(|&i| a[i]).collect()),
        }
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.split.iter().filter(|&&t| t == s).count();
        (count(Split::Train), count(Split::Dev), count(Split::Test))
    }
}

/// Reads whitespace-separated `token v_1 ... v_D` lines. Blank lines are
/// skipped.
pub fn load_embeddings(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let file = fs::File::open(path)?;
    let shown = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: shown.clone(),
        line,
        msg,
    };
    let mut tokens = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if row.is_empty() {
            return Err(parse_err(lineno, format!("token {token:?} has no values")));
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(lineno, format!("non-finite value {bad}")));
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(parse_err(
                    lineno,
                    format!("expected {d} values, found {}", row.len()),
                ))
            }
            _ => {}
        }
        if !seen.insert(token.to_string()) {
            return Err(parse_err(lineno, format!("duplicate token {token:?}")));
        }
        tokens.push(token.to_string());
        values.extend(row);
    }
    let Some(d) = dim else {
        return Err(Error::Empty(format!("no embeddings in {shown}")));
    };
    let x = DMatrix::from_row_slice(tokens.len(), d, &values);
    Ok((tokens, x))
}

/// Writes the text format read by [`load_embeddings`], printing each value
/// with the shortest representation that parses back to the same bits.
pub fn save_embeddings(path: &Path, tokens: &[String], x: &DMatrix<f64>) -> Result<()> {
    if tokens.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: tokens.len(),
        });
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (i, t) in tokens.iter().enumerate() {
        if t.is_empty() || t.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("token {t:?} cannot be written")));
        }
        write!(out, "{t}")?;
        for v in x.row(i).iter() {
            write!(out, " {v:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Scales every row to unit Euclidean norm.
pub fn normalize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "row {i} cannot be normalized"
            )));
        }
        row /= n;
    }
    Ok(out)
}

/// Labels the extremes of the `a - b` direction.
///
/// Rows are normalized and scored by `x . (x_a - x_b)`; the `per_side`
/// highest get label `true` (class `a`), the `per_side` lowest `false`, and
/// the rest are dropped. Output rows keep their input order.
pub fn induce_labels(
    tokens: &[String],
    x: &DMatrix<f64>,
    anchor_a: &str,
    anchor_b: &str,
    per_side: usize,
) -> Result<LabeledEmbeddings> {
    if tokens.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: tokens.len(),
        });
    }
    let find = |w: &str| {
        tokens
            .iter()
            .position(|t| t == w)
            .ok_or_else(|| Error::MissingWord(w.to_string()))
    };
    let ia = find(anchor_a)?;
    let ib = find(anchor_b)?;
    let n = tokens.len();
    if per_side == 0 || 2 * per_side > n {
        return Err(Error::InvalidArgument(format!(
            "per_side must lie in 1..={}, got {per_side}",
            n / 2
        )));
    }
    let xn = normalize(x)?;
    let dir = xn.row(ia) - xn.row(ib);
    let scores: Vec<f64> = (0..n).map(|i| xn.row(i).dot(&dir)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut label: Vec<Option<bool>> = vec![None; n];
    for &i in &order[..per_side] {
        label[i] = Some(true);
    }
    for &i in &order[n - per_side..] {
        label[i] = Some(false);
    }
    let keep: Vec<usize> = (0..n).filter(|&i| label[i].is_some()).collect();
    Ok(LabeledEmbeddings {
        tokens: keep.iter().map(|&i| tokens[i].clone()).collect(),
        x: DMatrix::from_fn(keep.len(), x.ncols(), |r, c| xn[(keep[r], c)]),
        y: keep.iter().map(|&i| label[i].unwrap()).collect(),
        split: Vec::new(),
        aux: None,
    })
}

/// Splits each class separately so that every split keeps the overall class
/// ratio (largest-remainder rounding). Rows not assigned to any split are
/// dropped.
pub fn split(
    data: &LabeledEmbeddings,
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<LabeledEmbeddings> {
    let n = data.len();
    let (tr, dv, te) = sizes;
    let total = tr + dv + te;
    if total > n {
        return Err(Error::InvalidArgument(format!(
            "split sizes {sizes:?} exceed {n} rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..n).filter(|&i| data.y[i]).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| !data.y[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let pos_share = pos.len() as f64 / n as f64;

    // positives per split, largest remainder so they sum to the share of `total`
    let targets = [tr, dv, te];
    let want_pos = ((total as f64) * pos_share).round() as usize;
    let want_pos = want_pos.min(pos.len()).max(total.saturating_sub(neg.len()));
    let raw: Vec<f64> = targets
        .iter()
        .map(|&t| t as f64 * want_pos as f64 / total.max(1) as f64)
        .collect();
    let mut alloc: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut rest = want_pos - alloc.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..3).collect();
    by_frac.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in &by_frac {
        if rest == 0 {
            break;
        }
        if alloc[i] < targets[i] {
            alloc[i] += 1;
            rest -= 1;
        }
    }

    let mut tags: Vec<Option<Split>> = vec![None; n];
    let (mut pi, mut ni) = (0, 0);
    for (s, (&t, &p)) in [Split::Train, Split::Dev, Split::Test]
        .iter()
        .zip(targets.iter().zip(&alloc))
    {
        for &i in &pos[pi..pi + p] {
            tags[i] = Some(*s);
        }
        pi += p;
        let q = t - p;
        for &i in &neg[ni..ni + q] {
            tags[i] = Some(*s);
        }
        ni += q;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| tags[i].is_some()).collect();
    Ok(LabeledEmbeddings {
        tokens: keep.iter().map(|&i| data.tokens[i].clone()).collect(),
        x: DMatrix::from_fn(keep.len(), data.x.ncols(), |r, c| data.x[(keep[r], c)]),
        y: keep.iter().map(|&i| data.y[i]).collect(),
        split: keep.iter().map(|&i| tags[i].unwrap()).collect(),
        aux: data
            .aux
            .as_ref()
            .map(|a| keep.iter().map(|&i| a[i]).collect()),
    })
}

/// Fraction of drawn points that [`synth_radial`] discards around the
/// median radius, leaving a margin between the classes.
pub const SYNTH_BAND: f64 = 0.2;

/// Synthetic data with a concept that no linear probe can read.
///
/// Draws `m = ceil(n / (1 - SYNTH_BAND))` points: `g ~ N(0, I_d)` and a random
/// sign `s`, with `x = [g, s] / |[g, s]|` (so `D = d + 1`). Points are ranked
/// by the radius `|(x_1, x_2)|` of the normalized point; the top `n/2` are
/// positives, the bottom `n/2` negatives and the middle is dropped. Rows keep
/// draw order. The auxiliary attribute is `g_3 > 0`, which stays linearly
/// readable.
///
/// Negating any coordinate leaves both the distribution and the concept
/// unchanged, so both classes are centred at the origin and linear probes
/// stay close to chance.
pub fn synth_radial(n: usize, d: usize, seed: u64) -> Result<LabeledEmbeddings> {
    if d < 3 {
        return Err(Error::InvalidArgument(format!(
            "synth_radial needs d >= 3, got {d}"
        )));
    }
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "synth_radial needs an even n > 0, got {n}"
        )));
    }
    let m = (n as f64 / (1.0 - SYNTH_BAND)).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(m);
    let mut radius = Vec::with_capacity(m);
    let mut aux = Vec::with_capacity(m);
    for _ in 0..m {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let norm = (g.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt();
        let mut row: Vec<f64> = g.iter().map(|v| v / norm).collect();
        row.push(s / norm);
        radius.push(row[0].hypot(row[1]));
        aux.push(g[2] > 0.0);
        rows.push(row);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| radius[b].total_cmp(&radius[a]).then(a.cmp(&b)));
    let mut label: Vec<Option<bool>> = vec![None; m];
    for &i in &order[..n / 2] {
        label[i] = Some(true);
    }
    for &i in &order[m - n / 2..] {
        label[i] = Some(false);
    }
    let keep: Vec<usize> = (0..m).filter(|&i| label[i].is_some()).collect();
    let x = DMatrix::from_fn(n, d + 1, |i, j| rows[keep[i]][j]);
    Ok(LabeledEmbeddings {
        tokens: (0..n).map(|i| format!("p{i}")).collect(),
        x,
        y: keep.iter().map(|&i| label[i] == Some(true)).collect(),
        split: Vec::new(),
        aux: Some(keep.iter().map(|&i| aux[i]).collect()),
    })
}

/// Writes `token label split [aux]` rows (labels as 0/1), with a header.
pub fn save_labels(path: &Path, data: &LabeledEmbeddings) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let has_aux = data.aux.is_some();
    writeln!(
        out,
        "token\tlabel\tsplit{}",
        if has_aux { "\taux" } else { "" }
    )?;
    for i in 0..data.len() {
        let tag = data
            .split
            .get(i)
            .map(|s| s.to_string())
            .unwrap_or_else(|| "-".into());
        write!(out, "{}\t{}\t{}", data.tokens[i], data.y[i] as u8, tag)?;
        if let Some(a) = &data.aux {
            write!(out, "\t{}", a[i] as u8)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub token: String,
    pub label: bool,
    pub split: Option<Split>,
    pub aux: Option<bool>,
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let text = fs::read_to_string(path)?;
    let shown = path.display().to_string();
    let err = |line: usize, msg: String| Error::Parse {
        path: shown.clone(),
        line,
        msg,
    };
    let bit = |s: &str, line: usize| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(err(line, format!("expected 0 or 1, found {other:?}"))),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || (i == 0 && line.starts_with("token\t")) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 && f.len() != 4 {
            return Err(err(
                lineno,
                format!("expected 3 or 4 fields, found {}", f.len()),
            ));
        }
        let split = match f[2] {
            "-" => None,
            s => Some(s.parse().map_err(|e: Error| err(lineno, e.to_string()))?),
        };
        rows.push(LabelRow {
            token: f[0].to_string(),
            label: bit(f[1], lineno)?,
            split,
            aux: f.get(3).map(|s| bit(s, lineno)).transpose()?,
        });
    }
    Ok(rows)
}

/// Joins an embedding table with label rows (in label-file order).
pub fn attach_labels(
    tokens: &[String],
    x: &DMatrix<f64>,
    rows: &[LabelRow],
) -> Result<LabeledEmbeddings> {
    let index: std::collections::HashMap<&str, usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut picked = Vec::with_capacity(rows.len());
    for r in rows {
        let i = *index
            .get(r.token.as_str())
            .ok_or_else(|| Error::MissingWord(r.token.clone()))?;
        picked.push(i);
    }
    let has_split = rows.iter().all(|r| r.split.is_some());
    let has_aux = rows.iter().all(|r| r.aux.is_some()) && !rows.is_empty();
    Ok(LabeledEmbeddings {
        tokens: rows.iter().map(|r| r.token.clone()).collect(),
        x: DMatrix::from_fn(picked.len(), x.ncols(), |r, c| x[(picked[r], c)]),
        y: rows.iter().map(|r| r.label).collect(),
        split: if has_split {
            rows.iter().map(|r| r.split.unwrap()).collect()
        } else {
            Vec::new()
        },
        aux: has_aux.then(|| rows.iter().map(|r| r.aux.unwrap()).collect()),
    })
}

/// Reads one word per line, skipping blanks and `#` comments.
pub fn load_word_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
