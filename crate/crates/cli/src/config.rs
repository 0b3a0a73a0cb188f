//! Flat `key=value` run configuration.
//!
//! Every key has a default; a config file and `--set` overrides replace
//! them in that order, and `KCE_OUT` replaces `out` last. Unknown keys are
//! rejected so that typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use kce_core::adversaries::{KernelConfig, MlpConfig, TransferConfig};
use kce_core::container::config_hash;
use kce_core::fantope_game::SolverConfig;
use kce_core::kernels::{default_grid, KernelSpec};
use kce_core::preimage::PreimageConfig;

const DEFAULTS: &[(&str, &str)] = &[
    ("embeddings", ""),
    ("labels", ""),
    ("synthetic", ""),
    ("synth.n", "2000"),
    ("synth.d", "10"),
    ("synth.seed", "0"),
    ("anchor_a", "he"),
    ("anchor_b", "she"),
    ("per_side", "7500"),
    ("split", "7350,3150,4500"),
    ("split_seed", "0"),
    ("out", "runs"),
    ("kernels", "grid"),
    ("seeds", "0,1,2,3"),
    ("landmarks", "1024"),
    ("k", "1"),
    ("lr_theta", "0.08"),
    ("lr_b", "0.08"),
    ("batch_size", "256"),
    ("total_batches", "35000"),
    ("eval_every", "500"),
    ("probe_reg", "1e-4"),
    ("preimage.lr", "0.01"),
    ("preimage.batch_size", "128"),
    ("preimage.total_batches", "15000"),
    ("preimage.eval_every", "250"),
    ("adversary.reg", "1e-3"),
    ("adversary.cap", "8000"),
    ("mlp.hidden", "128"),
    ("mlp.lr", "0.05"),
    ("mlp.epochs", "2000"),
    ("mlp.batch_size", "32"),
    ("mlp.seeds", "0,1,2"),
    ("weat.x", ""),
    ("weat.y", ""),
    ("weat.a", ""),
    ("weat.b", ""),
    ("weat.permutations", "10000"),
    ("simlex", ""),
    ("neighbors.k", "10"),
    ("neighbors.limit", "50000"),
];

/// Keys that locate files rather than define the experiment; left out of
/// the snapshot so that moving a run does not change its hash.
const LOCATION_KEYS: &[&str] = &["out"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn split_line(line: &str) -> Result<(String, String)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| anyhow!("expected key=value, got {line:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Defaults, then the file (if any), then `overrides`, then `KCE_OUT`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) =
                    split_line(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
                cfg.set(&k, &v)?;
            }
        }
        for o in overrides {
            let (k, v) = split_line(o).context("--set")?;
            cfg.set(&k, &v)?;
        }
        if let Ok(out) = std::env::var("KCE_OUT") {
            if !out.is_empty() {
                cfg.set("out", &out)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!("unknown config key {key:?}"),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key);
        raw.parse()
            .map_err(|e| anyhow!("config {key}={raw:?}: {e}"))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("config {key}: {s:?}: {e}")))
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Like [`RunConfig::path`], but the file must exist.
    pub fn existing_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.path(key) {
            Some(p) if !p.exists() => bail!("{key}: {} does not exist", p.display()),
            other => Ok(other),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    /// `key=value` lines in key order, location keys excluded.
    pub fn snapshot(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| !LOCATION_KEYS.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        config_hash(&self.snapshot())
    }

    /// `grid` for the full hyperparameter grid, otherwise `;`-separated
    /// kernel specifications.
    pub fn kernels(&self) -> Result<Vec<KernelSpec>> {
        let raw = self.get("kernels").trim();
        if raw == "grid" {
            return Ok(default_grid());
        }
        let grid: Vec<KernelSpec> = raw
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("kernel {s:?}: {e}")))
            .collect::<Result<_>>()?;
        if grid.is_empty() {
            bail!("empty kernel grid");
        }
        Ok(grid)
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds: Vec<u64> = self.list("seeds")?;
        if seeds.is_empty() {
            bail!("no seeds configured");
        }
        Ok(seeds)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key)
    }

    pub fn split_sizes(&self) -> Result<(usize, usize, usize)> {
        match self.list::<usize>("split")?.as_slice() {
            &[a, b, c] => Ok((a, b, c)),
            _ => bail!("split needs three sizes, got {:?}", self.get("split")),
        }
    }

    /// Solver settings for one run; the run seed drives the minibatches.
    pub fn solver(&self, seed: u64) -> Result<SolverConfig> {
        Ok(SolverConfig {
            lr_theta: self.parse("lr_theta")?,
            lr_b: self.parse("lr_b")?,
            batch_size: self.parse("batch_size")?,
            total_batches: self.parse("total_batches")?,
            eval_every: self.parse("eval_every")?,
            probe_reg: self.parse("probe_reg")?,
            seed,
        })
    }

    pub fn preimage(&self, seed: u64) -> Result<PreimageConfig> {
        Ok(PreimageConfig {
            lr: self.parse("preimage.lr")?,
            batch_size: self.parse("preimage.batch_size")?,
            total_batches: self.parse("preimage.total_batches")?,
            eval_every: self.parse("preimage.eval_every")?,
            seed,
        })
    }

    pub fn transfer(&self) -> Result<TransferConfig> {
        Ok(TransferConfig {
            kernel: KernelConfig {
                reg: self.parse("adversary.reg")?,
                cap: self.parse("adversary.cap")?,
                ..KernelConfig::default()
            },
            mlp: MlpConfig {
                hidden: self.parse("mlp.hidden")?,
                lr: self.parse("mlp.lr")?,
                epochs: self.parse("mlp.epochs")?,
                batch_size: self.parse("mlp.batch_size")?,
                seed: 0,
            },
            mlp_seeds: self.list("mlp.seeds")?,
        })
    }
}
