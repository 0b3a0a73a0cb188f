//! Dataset assembly, the erase loop, and trained-run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kce_core::adversaries::Cell;
use kce_core::container::{
    config_section, game_from_section, game_section, nystrom_from_section, nystrom_section,
    preimage_from_section, preimage_section, Container,
};
use kce_core::data::{
    attach_labels, induce_labels, load_embeddings, load_labels, majority_accuracy, normalize,
    save_embeddings, save_labels, split, synth_radial, LabeledEmbeddings, Split,
};
use kce_core::fantope_game::{linear_probe, solve, GameSolution};
use kce_core::kernels::KernelSpec;
use kce_core::nystrom::{self, NystromMap};
use kce_core::preimage::{relative_reconstruction_error, train, PreimageNet};
use nalgebra::DMatrix;

use crate::config::RunConfig;

/// `0.xx ± 0.xx`.
pub fn cell(values: &[f64]) -> String {
    if values.is_empty() {
        return "-".into();
    }
    let c = Cell::from_values(values);
    format!("{:.2} ± {:.2}", c.mean, c.std)
}

/// Header line that ties a report to its configuration.
pub fn provenance(cfg: &RunConfig) -> String {
    format!("# config sha256={}\n", cfg.hash())
}

pub fn write_report(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Lowercase alphanumerics with single dashes, e.g. `rbf-gamma-1-0`.
pub fn slug(kernel: &KernelSpec) -> String {
    let mut out = String::new();
    for ch in kernel.to_string().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

pub fn run_path(cfg: &RunConfig, kernel: &KernelSpec, seed: u64) -> PathBuf {
    cfg.out_dir()
        .join(slug(kernel))
        .join(format!("seed-{seed}.kce1"))
}

/// Fails early when required inputs are absent.
pub fn check_inputs(cfg: &RunConfig) -> Result<()> {
    match cfg.get("synthetic") {
        "" => {
            if cfg.existing_path("embeddings")?.is_none() {
                bail!("no embeddings configured (set embeddings=<path> or synthetic=radial)");
            }
            cfg.existing_path("labels")?;
        }
        "radial" => {}
        other => bail!("unknown synthetic dataset {other:?}"),
    }
    Ok(())
}

/// The unit-normalized embedding table (or the synthetic points).
pub fn load_vocab(cfg: &RunConfig) -> Result<(Vec<String>, DMatrix<f64>)> {
    check_inputs(cfg)?;
    if cfg.get("synthetic") == "radial" {
        let d = synthetic(cfg)?;
        return Ok((d.tokens, d.x));
    }
    let path = cfg.path("embeddings").expect("checked above");
    let (tokens, x) = load_embeddings(&path)?;
    Ok((tokens, normalize(&x)?))
}

fn synthetic(cfg: &RunConfig) -> Result<LabeledEmbeddings> {
    Ok(synth_radial(
        cfg.usize("synth.n")?,
        cfg.usize("synth.d")?,
        cfg.u64("synth.seed")?,
    )?)
}

/// Labeled, split data: synthetic, a label file (whose split column is
/// used when complete), or labels induced from the anchor direction.
pub fn load_dataset(cfg: &RunConfig) -> Result<LabeledEmbeddings> {
    let sizes = cfg.split_sizes()?;
    let split_seed = cfg.u64("split_seed")?;
    if cfg.get("synthetic") == "radial" {
        check_inputs(cfg)?;
        return Ok(split(&synthetic(cfg)?, sizes, split_seed)?);
    }
    let (tokens, x) = load_vocab(cfg)?;
    let labeled = match cfg.path("labels") {
        Some(path) => attach_labels(&tokens, &x, &load_labels(&path)?)?,
        None => induce_labels(
            &tokens,
            &x,
            cfg.get("anchor_a"),
            cfg.get("anchor_b"),
            cfg.usize("per_side")?,
        )?,
    };
    if !labeled.split.is_empty() {
        return Ok(labeled);
    }
    Ok(split(&labeled, sizes, split_seed)?)
}

/// Writes the assembled dataset under `<out>/data`.
pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let dir = cfg.out_dir().join("data");
    fs::create_dir_all(&dir)?;
    save_labels(&dir.join("labels.tsv"), &data)?;
    if cfg.get("synthetic") == "radial" {
        save_embeddings(&dir.join("embeddings.txt"), &data.tokens, &data.x)?;
    }
    let (tr, dv, te) = data.split_sizes();
    let positives = data.y.iter().filter(|&&y| y).count();
    println!(
        "{} rows (dim {}), {positives} positive; train {tr}, dev {dv}, test {te}; written to {}",
        data.len(),
        data.x.ncols(),
        dir.display()
    );
    Ok(())
}

/// What one `(kernel, seed)` erase run logs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rank: usize,
    pub selected_step: usize,
    pub dev_accuracy: f64,
    /// Linear probe on `P phi(x)`, fitted on train and scored on test.
    pub probe_after: f64,
    pub majority: f64,
    pub recon_percent: f64,
}

pub struct TrainedRun {
    pub map: NystromMap,
    pub game: GameSolution,
    pub net: PreimageNet,
}

/// A kernel with its loaded runs, keyed by seed.
pub type KernelRuns = (KernelSpec, Vec<(u64, TrainedRun)>);

fn erase_one(
    cfg: &RunConfig,
    data: &LabeledEmbeddings,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<RunRecord> {
    let (tr, dv, te) = (
        data.part(Split::Train),
        data.part(Split::Dev),
        data.part(Split::Test),
    );
    let landmarks = cfg.usize("landmarks")?.min(tr.len());
    let map = nystrom::fit(&tr.x, kernel, landmarks, seed)?;
    let ftr = map.transform_rows(&tr.x)?;
    let fdv = map.transform_rows(&dv.x)?;
    let fte = map.transform_rows(&te.x)?;
    let game = solve(
        &ftr,
        &tr.y,
        &fdv,
        &dv.y,
        cfg.usize("k")?,
        &cfg.solver(seed)?,
    )?;
    let probe_after = linear_probe(&(&ftr * &game.p), &tr.y, &(&fte * &game.p), &te.y)?;
    let dev_accuracy = game
        .history
        .iter()
        .find(|h| h.step == game.selected_step)
        .map_or(f64::NAN, |h| h.dev_accuracy);
    log::info!(
        "{kernel} seed {seed}: rank {}, in-RKHS probe after erasure {probe_after:.3}",
        map.rank()
    );

    let net = PreimageNet::new(tr.x.ncols(), seed)?;
    let fit = train(&net, &tr.x, &dv.x, &game.p, &map, &cfg.preimage(seed)?)?;
    let recon = relative_reconstruction_error(&fit.net, &te.x, &game.p, &map)?;

    let mut snapshot = cfg.snapshot();
    let _ = writeln!(snapshot, "run.kernel={kernel}\nrun.seed={seed}");
    let mut container = Container::default();
    container.push(nystrom_section(&map));
    container.push(game_section(&game));
    container.push(preimage_section(&fit.net));
    container.push(config_section(&snapshot));
    let path = run_path(cfg, kernel, seed);
    fs::create_dir_all(path.parent().expect("run path has a parent"))?;
    container.write(&path)?;

    Ok(RunRecord {
        rank: map.rank(),
        selected_step: game.selected_step,
        dev_accuracy,
        probe_after,
        majority: majority_accuracy(&te.y),
        recon_percent: recon.mean_percent,
    })
}

pub fn load_run(path: &Path) -> Result<TrainedRun> {
    let c = Container::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TrainedRun {
        map: nystrom_from_section(c.section("nystrom")?)?,
        game: game_from_section(c.section("game")?)?,
        net: preimage_from_section(c.section("preimage")?)?,
    })
}

/// Every configured `(kernel, seed)` whose artifact loads, in grid order.
/// Missing or unreadable runs are logged and left out.
pub fn trained_runs(cfg: &RunConfig) -> Result<Vec<KernelRuns>> {
    let seeds = cfg.seeds()?;
    let mut out = Vec::new();
    for kernel in cfg.kernels()? {
        let mut runs = Vec::new();
        for &seed in &seeds {
            match load_run(&run_path(cfg, &kernel, seed)) {
                Ok(run) => runs.push((seed, run)),
                Err(e) => log::warn!("skipping {kernel} seed {seed}: {e:#}"),
            }
        }
        out.push((kernel, runs));
    }
    Ok(out)
}

/// [`trained_runs`], failing when nothing has been trained.
pub fn require_runs(cfg: &RunConfig) -> Result<Vec<KernelRuns>> {
    let runs = trained_runs(cfg)?;
    if runs.iter().all(|(_, r)| r.is_empty()) {
        bail!(
            "no trained runs under {} (run `kce erase` first)",
            cfg.out_dir().display()
        );
    }
    Ok(runs)
}

/// Runs the whole grid. A failing `(kernel, seed)` is recorded in the run
/// log and does not stop the others. Returns the number of failures.
pub fn erase(cfg: &RunConfig) -> Result<usize> {
    let data = load_dataset(cfg)?;
    let kernels = cfg.kernels()?;
    let seeds = cfg.seeds()?;
    let mut runs = provenance(cfg);
    runs.push_str("kernel\tseed\tstatus\trank\tselected_step\tdev_accuracy\tprobe_after\tmajority\trecon_percent\n");
    let mut summary = provenance(cfg);
    summary.push_str("kernel\truns\tfailed\tprobe_after\tmajority\trecon_percent\n");
    let mut failures = 0;
    for kernel in &kernels {
        let mut ok = Vec::new();
        for &seed in &seeds {
            match erase_one(cfg, &data, kernel, seed) {
                Ok(r) => {
                    let _ = writeln!(
                        runs,
                        "{kernel}\t{seed}\tok\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                        r.rank,
                        r.selected_step,
                        r.dev_accuracy,
                        r.probe_after,
                        r.majority,
                        r.recon_percent
                    );
                    ok.push(r);
                }
                Err(e) => {
                    failures += 1;
                    log::error!("{kernel} seed {seed} failed: {e:#}");
                    let msg = format!("{e:#}").replace(['\t', '\n'], " ");
                    let _ = writeln!(runs, "{kernel}\t{seed}\terror: {msg}\t-\t-\t-\t-\t-\t-");
                }
            }
        }
        let col = |f: fn(&RunRecord) -> f64| ok.iter().map(f).collect::<Vec<_>>();
        let _ = writeln!(
            summary,
            "{kernel}\t{}\t{}\t{}\t{}\t{}",
            ok.len(),
            seeds.len() - ok.len(),
            cell(&col(|r| r.probe_after)),
            cell(&col(|r| r.majority)),
            cell(&col(|r| r.recon_percent)),
        );
    }
    let out = cfg.out_dir();
    write_report(&out.join("erase_runs.tsv"), &runs)?;
    write_report(&out.join("erase_summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug(&KernelSpec::Rbf { gamma: 0.15 }), "rbf-gamma-0-15");
        assert_eq!(slug(&KernelSpec::Linear), "linear");
    }

    #[test]
    fn cells_use_two_decimals() {
        assert_eq!(cell(&[0.5, 0.7]), "0.60 ± 0.10");
        assert_eq!(cell(&[]), "-");
    }
}
