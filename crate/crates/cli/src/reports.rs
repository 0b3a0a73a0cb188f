//! Evaluation subcommands. Each writes a TSV (and, for the transfer table,
//! Markdown) under the output directory, headed by the config hash.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use kce_core::adversaries::{
    accuracy, fit_kernel, transfer_adversaries, transfer_matrix, NeutralizedSet, PreimageRun,
};
use kce_core::association::{
    load_similarity_pairs, nearest_neighbors, similarity_correlation, weat, SimilarityPair,
    WeatSpec, WordVectors,
};
use kce_core::data::{load_word_list, Split};
use kce_core::exactgame::{explicit, game_objective, project_predict, DualPair};
use kce_core::fantope_game::linear_probe;
use kce_core::kernels::KernelSpec;
use kce_core::linalg::logistic_loss;
use kce_core::preimage::PreimageNet;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::pipeline::{
    cell, load_dataset, load_vocab, provenance, require_runs, trained_runs, write_report,
};

/// Same-kernel adversary before and after erasure, per kernel family,
/// averaged over the hyperparameter grid and seeds.
pub fn eval_same(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let (tr, te) = (data.part(Split::Train), data.part(Split::Test));
    let adv_cfg = cfg.transfer()?.kernel;
    let mut by_family: BTreeMap<&'static str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut runs_tsv = provenance(cfg);
    runs_tsv.push_str("kernel\tseed\tbefore\tafter\trkhs_probe_after\n");
    for (kernel, runs) in require_runs(cfg)? {
        if runs.is_empty() {
            continue;
        }
        let before = accuracy(&fit_kernel(&tr.x, &tr.y, &kernel, &adv_cfg)?, &te.x, &te.y)?;
        let entry = by_family.entry(kernel.family()).or_default();
        for (seed, run) in runs {
            let ptr = run.net.forward_rows(&tr.x, false, 0)?;
            let pte = run.net.forward_rows(&te.x, false, 0)?;
            let after = accuracy(&fit_kernel(&ptr, &tr.y, &kernel, &adv_cfg)?, &pte, &te.y)?;
            let erased = |x: &DMatrix<f64>| run.map.transform_rows(x).map(|f| f * &run.game.p);
            let probe = linear_probe(&erased(&tr.x)?, &tr.y, &erased(&te.x)?, &te.y)?;
            let _ = writeln!(
                runs_tsv,
                "{kernel}\t{seed}\t{before:.6}\t{after:.6}\t{probe:.6}"
            );
            entry.0.push(before);
            entry.1.push(after);
        }
    }
    let mut table = provenance(cfg);
    table.push_str("family\tbefore\tafter\n");
    for (family, (before, after)) in &by_family {
        let _ = writeln!(table, "{family}\t{}\t{}", cell(before), cell(after));
    }
    let out = cfg.out_dir();
    write_report(&out.join("eval_same_runs.tsv"), &runs_tsv)?;
    write_report(&out.join("eval_same.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

/// Every adversary against every neutralizing kernel's pre-images.
pub fn eval_transfer(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let (tr, te) = (data.part(Split::Train), data.part(Split::Test));
    let mut sets = Vec::new();
    for (kernel, runs) in require_runs(cfg)? {
        if runs.is_empty() {
            continue;
        }
        let runs = runs
            .iter()
            .map(|(_, run)| {
                Ok(PreimageRun {
                    train: run.net.forward_rows(&tr.x, false, 0)?,
                    test: run.net.forward_rows(&te.x, false, 0)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sets.push(NeutralizedSet {
            label: kernel.to_string(),
            runs,
        });
    }
    let table = transfer_matrix(
        &sets,
        &transfer_adversaries(),
        &tr.y,
        &te.y,
        &cfg.transfer()?,
    )?;
    let out = cfg.out_dir();
    let head = provenance(cfg);
    write_report(
        &out.join("transfer.tsv"),
        &format!("{head}{}", table.to_tsv()),
    )?;
    let md = format!(
        "<!-- config sha256={} -->\n\n{}",
        cfg.hash(),
        table.to_markdown()
    );
    write_report(&out.join("transfer.md"), &md)?;
    print!("{}", table.to_markdown());
    Ok(())
}

/// Vectors for `words` (those present), taken from the vocabulary and
/// optionally passed through a pre-image network.
fn table_for(
    tokens: &[String],
    x: &DMatrix<f64>,
    words: &HashSet<&str>,
    net: Option<&PreimageNet>,
) -> Result<WordVectors> {
    let mut picked_tokens = Vec::new();
    let mut rows = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if words.contains(t.as_str()) {
            picked_tokens.push(t.clone());
            rows.push(i);
        }
    }
    let sub = DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)]);
    let sub = match net {
        Some(net) => net.forward_rows(&sub, false, 0)?,
        None => sub,
    };
    Ok(WordVectors::from_matrix(picked_tokens, &sub)?)
}

fn weat_lists(cfg: &RunConfig, known: &HashSet<&str>) -> Result<WeatSpec> {
    let mut lists = Vec::new();
    for key in ["weat.x", "weat.y", "weat.a", "weat.b"] {
        let Some(path) = cfg.existing_path(key)? else {
            bail!("{key} is not set");
        };
        let (present, missing): (Vec<String>, Vec<String>) = load_word_list(&path)?
            .into_iter()
            .partition(|w| known.contains(w.as_str()));
        if !missing.is_empty() {
            log::warn!(
                "{key}: {} words not in the vocabulary: {missing:?}",
                missing.len()
            );
        }
        lists.push(present);
    }
    let b_words = lists.pop().expect("four lists");
    let a_words = lists.pop().expect("four lists");
    let y_words = lists.pop().expect("four lists");
    let x_words = lists.pop().expect("four lists");
    Ok(WeatSpec {
        x_words,
        y_words,
        a_words,
        b_words,
        permutations: cfg.usize("weat.permutations")?,
    })
}

pub fn run_weat(cfg: &RunConfig) -> Result<()> {
    let (tokens, x) = load_vocab(cfg)?;
    let known: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    let spec = weat_lists(cfg, &known)?;
    let words: HashSet<&str> = [&spec.x_words, &spec.y_words, &spec.a_words, &spec.b_words]
        .into_iter()
        .flatten()
        .map(String::as_str)
        .collect();
    let mut out = provenance(cfg);
    out.push_str("representation\truns\td\tp\n");
    let original = weat(&table_for(&tokens, &x, &words, None)?, &spec, 0)?;
    let _ = writeln!(
        out,
        "original\t1\t{}\t{}",
        cell(&[original.d]),
        cell(&[original.p])
    );
    for (kernel, runs) in trained_runs(cfg)? {
        if runs.is_empty() {
            continue;
        }
        let mut d = Vec::new();
        let mut p = Vec::new();
        for (seed, run) in &runs {
            let r = weat(
                &table_for(&tokens, &x, &words, Some(&run.net))?,
                &spec,
                *seed,
            )?;
            d.push(r.d);
            p.push(r.p);
        }
        let _ = writeln!(out, "{kernel}\t{}\t{}\t{}", runs.len(), cell(&d), cell(&p));
    }
    write_report(&cfg.out_dir().join("weat.tsv"), &out)?;
    print!("{out}");
    Ok(())
}

/// `(rho_before, rho_after, used)` for one network (or the identity).
pub fn similarity_row(
    tokens: &[String],
    x: &DMatrix<f64>,
    pairs: &[SimilarityPair],
    net: Option<&PreimageNet>,
) -> Result<(f64, f64, usize)> {
    let words: HashSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.w1.as_str(), p.w2.as_str()])
        .collect();
    let before = table_for(tokens, x, &words, None)?;
    let after = table_for(tokens, x, &words, net)?;
    let r = similarity_correlation(&before, &after, pairs)?;
    Ok((r.rho_before, r.rho_after, r.used))
}

pub fn run_simlex(cfg: &RunConfig) -> Result<()> {
    let Some(path) = cfg.existing_path("simlex")? else {
        bail!("simlex is not set");
    };
    let pairs = load_similarity_pairs(&path)?;
    let (tokens, x) = load_vocab(cfg)?;
    let mut out = provenance(cfg);
    out.push_str("representation\truns\tpairs\trho_before\trho_after\n");
    let (rho, _, used) = similarity_row(&tokens, &x, &pairs, None)?;
    let _ = writeln!(
        out,
        "original\t1\t{used}\t{}\t{}",
        cell(&[rho]),
        cell(&[rho])
    );
    for (kernel, runs) in trained_runs(cfg)? {
        if runs.is_empty() {
            continue;
        }
        let mut before = Vec::new();
        let mut after = Vec::new();
        for (_, run) in &runs {
            let (b, a, _) = similarity_row(&tokens, &x, &pairs, Some(&run.net))?;
            before.push(b);
            after.push(a);
        }
        let _ = writeln!(
            out,
            "{kernel}\t{}\t{used}\t{}\t{}",
            runs.len(),
            cell(&before),
            cell(&after)
        );
    }
    write_report(&cfg.out_dir().join("simlex.tsv"), &out)?;
    print!("{out}");
    Ok(())
}

/// Nearest neighbors of `words` among the first `neighbors.limit` rows,
/// in the original space and, with `run`, after the pre-image network.
pub fn neighbors(cfg: &RunConfig, words: &[String], run: Option<&Path>) -> Result<()> {
    let (mut tokens, mut x) = load_vocab(cfg)?;
    let limit = cfg.usize("neighbors.limit")?;
    if limit > 0 && tokens.len() > limit {
        tokens.truncate(limit);
        x = x.rows(0, limit).into_owned();
    }
    let k = cfg.usize("neighbors.k")?;
    let mut spaces = vec![(
        "original".to_string(),
        WordVectors::from_matrix(tokens.clone(), &x)?,
    )];
    if let Some(path) = run {
        let trained = crate::pipeline::load_run(path)?;
        let mapped = trained.net.forward_rows(&x, false, 0)?;
        spaces.push((
            format!("pre-image ({})", path.display()),
            WordVectors::from_matrix(tokens.clone(), &mapped)?,
        ));
    }
    for word in words {
        for (label, table) in &spaces {
            let found = nearest_neighbors(table, word, k)?;
            let list: Vec<String> = found.iter().map(|(t, s)| format!("{t} {s:.3}")).collect();
            println!("{word} [{label}]: {}", list.join(", "));
        }
    }
    Ok(())
}

/// Largest absolute deviation between the dual-form game and the explicit
/// degree-2 polynomial feature map over `instances` random problems with
/// `n` anchors in the plane.
pub fn oracle_deviation(instances: usize, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let gamma = rng.random_range(0.2..2.0);
        let offset = rng.random_range(0.1..2.0);
        let mut u = || rng.random_range(-1.0..1.0);
        let anchors = DMatrix::from_fn(n, 2, |_, _| u());
        let alpha = DVector::from_fn(n, |_, _| u());
        let beta = DVector::from_fn(n, |_, _| u());
        let z = DMatrix::from_fn(n, 2, |_, _| u());
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let kernel = KernelSpec::poly(gamma, offset, 2)?;
        let pair = DualPair::new(alpha.clone(), beta.clone(), anchors.clone(), kernel)?;
        let (a, b) = (alpha.as_slice(), beta.as_slice());
        let mut loss = 0.0;
        for (m, &y) in labels.iter().enumerate() {
            let row: Vec<f64> = z.row(m).iter().copied().collect();
            let reference = explicit::project_predict(gamma, offset, &anchors, a, b, &row);
            worst = worst.max((project_predict(&pair, &row)? - reference).abs());
            loss += logistic_loss(y, reference);
        }
        worst = worst.max((game_objective(&pair, &z, &labels)? - loss).abs());
    }
    Ok(worst)
}

pub const ORACLE_TOLERANCE: f64 = 1e-8;

#[cfg(test)]
mod tests {
    use super::*;
    use kce_core::association::WordVectors;

    #[test]
    fn oracle_passes_on_poly2() {
        assert!(oracle_deviation(20, 10, 0).unwrap() < ORACLE_TOLERANCE);
    }

    #[test]
    fn identity_preimage_keeps_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tokens: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let x = DMatrix::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
        let pairs: Vec<SimilarityPair> = (0..15)
            .map(|i| SimilarityPair {
                w1: format!("w{i}"),
                w2: format!("w{}", i + 3),
                score: rng.random_range(0.0..10.0),
            })
            .collect();
        // a fresh network is the identity map
        let net = PreimageNet::new(5, 0).unwrap();
        let (before, after, used) = similarity_row(&tokens, &x, &pairs, Some(&net)).unwrap();
        assert_eq!(used, 15);
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn equal_attribute_lists_give_zero_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tokens: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let vectors = (0..12)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let table = WordVectors::new(tokens, vectors).unwrap();
        let spec = WeatSpec::new(
            &["w0", "w1", "w2"],
            &["w3", "w4", "w5"],
            &["w6", "w7"],
            &["w6", "w7"],
        );
        assert_eq!(weat(&table, &spec, 0).unwrap().d, 0.0);
    }
}
