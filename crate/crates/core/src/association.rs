//! Word-association and similarity diagnostics on embedding tables.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{cosine, norm};

/// Read-only lookup from token to vector.
pub trait Embedding {
    fn vector(&self, word: &str) -> Option<&[f64]>;
}

impl Embedding for HashMap<String, Vec<f64>> {
    fn vector(&self, word: &str) -> Option<&[f64]> {
        self.get(word).map(Vec::as_slice)
    }
}

/// A table of tokens and their vectors with an index for lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl WordVectors {
    pub fn new(tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if tokens.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: tokens.len(),
                got: vectors.len(),
            });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(WordVectors {
            tokens,
            vectors,
            index,
        })
    }

    pub fn from_matrix(tokens: Vec<String>, x: &nalgebra::DMatrix<f64>) -> Result<Self> {
        Self::new(tokens, crate::linalg::rows_of(x))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Embedding for WordVectors {
    fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatSpec {
    pub x_words: Vec<String>,
    pub y_words: Vec<String>,
    pub a_words: Vec<String>,
    pub b_words: Vec<String>,
    pub permutations: usize,
}

impl WeatSpec {
    pub fn new(x: &[&str], y: &[&str], a: &[&str], b: &[&str]) -> Self {
        let own = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        WeatSpec {
            x_words: own(x),
            y_words: own(y),
            a_words: own(a),
            b_words: own(b),
            permutations: 10_000,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("X", &self.x_words),
            ("Y", &self.y_words),
            ("A", &self.a_words),
            ("B", &self.b_words),
        ] {
            if list.is_empty() {
                return Err(Error::Empty(format!("WEAT word list {name}")));
            }
        }
        if let Some(w) = self.x_words.iter().find(|w| self.y_words.contains(w)) {
            return Err(Error::InvalidArgument(format!(
                "WEAT target lists overlap on {w:?}"
            )));
        }
        if self.permutations == 0 {
            return Err(Error::InvalidArgument(
                "WEAT permutations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatResult {
    /// Effect size.
    pub d: f64,
    /// One-sided permutation p-value.
    pub p: f64,
    /// Whether every partition was enumerated.
    pub exact: bool,
}

fn lookup<'a, E: Embedding + ?Sized>(embed: &'a E, word: &str) -> Result<&'a [f64]> {
    let v = embed
        .vector(word)
        .ok_or_else(|| Error::MissingWord(word.to_string()))?;
    if norm(v) == 0.0 {
        return Err(Error::InvalidArgument(format!("zero vector for {word:?}")));
    }
    Ok(v)
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Calls `f` with every `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// WEAT effect size and permutation p-value.
///
/// `s(w) = mean_a cos(w, a) - mean_b cos(w, b)`; the effect size is
/// `(mean_X s - mean_Y s) / std_{X u Y} s` with the population standard
/// deviation; `p` is the share of equal-size re-partitions of `X u Y` whose
/// statistic `sum_X s - sum_Y s` is at least the observed one. Partitions
/// are enumerated when there are at most `permutations` of them and sampled
/// with `seed` otherwise.
pub fn weat<E: Embedding + ?Sized>(embed: &E, spec: &WeatSpec, seed: u64) -> Result<WeatResult> {
    spec.validate()?;
    let a: Vec<&[f64]> = spec
        .a_words
        .iter()
        .map(|w| lookup(embed, w))
        .collect::<Result<_>>()?;
    let b: Vec<&[f64]> = spec
        .b_words
        .iter()
        .map(|w| lookup(embed, w))
        .collect::<Result<_>>()?;
    let assoc = |w: &str| -> Result<f64> {
        let v = lookup(embed, w)?;
        let ma = a.iter().map(|u| cosine(v, u)).sum::<f64>() / a.len() as f64;
        let mb = b.iter().map(|u| cosine(v, u)).sum::<f64>() / b.len() as f64;
        Ok(ma - mb)
    };
    let sx: Vec<f64> = spec
        .x_words
        .iter()
        .map(|w| assoc(w))
        .collect::<Result<_>>()?;
    let sy: Vec<f64> = spec
        .y_words
        .iter()
        .map(|w| assoc(w))
        .collect::<Result<_>>()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let all: Vec<f64> = sx.iter().chain(&sy).copied().collect();
    let m = mean(&all);
    let std = (all.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / all.len() as f64).sqrt();
    let numer = mean(&sx) - mean(&sy);
    let d = if std > 0.0 { numer / std } else { 0.0 };

    let total: f64 = all.iter().sum();
    let stat = |subset_sum: f64| 2.0 * subset_sum - total;
    let observed = stat(sx.iter().sum());
    // tolerate summation-order noise when comparing against the observed value
    let slack = 1e-12 * (1.0 + all.iter().map(|v| v.abs()).sum::<f64>());
    let n = all.len();
    let k = sx.len();
    let count = binomial(n, k);
    let (p, exact) = match count {
        Some(c) if c <= spec.permutations as u128 => {
            let mut hits = 0u128;
            for_each_combination(n, k, |idx| {
                let s: f64 = idx.iter().map(|&i| all[i]).sum();
                if stat(s) >= observed - slack {
                    hits += 1;
                }
            });
            (hits as f64 / c as f64, true)
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            let mut hits = 0usize;
            for _ in 0..spec.permutations {
                order.shuffle(&mut rng);
                let s: f64 = order[..k].iter().map(|&i| all[i]).sum();
                if stat(s) >= observed - slack {
                    hits += 1;
                }
            }
            (hits as f64 / spec.permutations as f64, false)
        }
    };
    Ok(WeatResult { d, p, exact })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub w1: String,
    pub w2: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityResult {
    pub rho_before: f64,
    pub rho_after: f64,
    /// Pairs with both words present in both tables.
    pub used: usize,
    pub skipped: usize,
}

pub const MIN_SIMILARITY_PAIRS: usize = 10;

/// Spearman correlation between cosine similarity and human scores, before
/// and after an intervention. Pairs missing from either table are skipped.
pub fn similarity_correlation<E: Embedding + ?Sized, F: Embedding + ?Sized>(
    before: &E,
    after: &F,
    pairs: &[SimilarityPair],
) -> Result<SimilarityResult> {
    let mut human = Vec::new();
    let mut sim_before = Vec::new();
    let mut sim_after = Vec::new();
    for p in pairs {
        let found = (
            before.vector(&p.w1),
            before.vector(&p.w2),
            after.vector(&p.w1),
            after.vector(&p.w2),
        );
        if let (Some(b1), Some(b2), Some(a1), Some(a2)) = found {
            human.push(p.score);
            sim_before.push(cosine(b1, b2));
            sim_after.push(cosine(a1, a2));
        }
    }
    let used = human.len();
    if used < MIN_SIMILARITY_PAIRS {
        return Err(Error::InvalidArgument(format!(
            "only {used} usable similarity pairs (need {MIN_SIMILARITY_PAIRS})"
        )));
    }
    Ok(SimilarityResult {
        rho_before: spearman(&sim_before, &human),
        rho_after: spearman(&sim_after, &human),
        used,
        skipped: pairs.len() - used,
    })
}

/// Reads a whitespace-separated similarity file with a header row.
///
/// Words come from the first two columns; the score from the column named
/// `SimLex999` or `score` (case-insensitive), or the third column when
/// neither is present.
pub fn load_similarity_pairs(path: &Path) -> Result<Vec<SimilarityPair>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(1, "empty similarity file".into()))?;
    let cols: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    let score_col = cols
        .iter()
        .position(|c| c == "simlex999" || c == "score")
        .unwrap_or(2);
    let mut pairs = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() <= score_col.max(1) {
            return Err(bad(
                i + 1,
                format!("expected at least {} columns", score_col.max(1) + 1),
            ));
        }
        let score = fields[score_col]
            .parse::<f64>()
            .map_err(|_| bad(i + 1, format!("bad score {:?}", fields[score_col])))?;
        pairs.push(SimilarityPair {
            w1: fields[0].to_lowercase(),
            w2: fields[1].to_lowercase(),
            score,
        });
    }
    Ok(pairs)
}

/// The `k` tokens closest to `word` by cosine, excluding `word` itself.
/// Equal similarities are ordered by token.
pub fn nearest_neighbors(embed: &WordVectors, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let q = embed
        .vector(word)
        .ok_or_else(|| Error::MissingWord(word.to_string()))?;
    let mut scored: Vec<(String, f64)> = embed
        .tokens
        .iter()
        .zip(&embed.vectors)
        .filter(|(t, _)| t.as_str() != word)
        .map(|(t, v)| (t.clone(), cosine(q, v)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
