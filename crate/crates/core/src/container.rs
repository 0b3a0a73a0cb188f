//! KCE1: the binary container for trained artifacts.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "KCE1"  u32 version  u32 n_sections
//! per section:  str name  str metadata  u32 n_arrays
//!   per array:  str name  u32 ndim  u64 shape[ndim]  f64 values[prod(shape)]
//! [u8; 32] SHA-256 of every preceding byte
//! ```
//!
//! where `str` is a `u32` byte length followed by UTF-8. Matrices are stored
//! row-major with shape `[rows, cols]`. Metadata is `key=value` lines.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fantope_game::{EvalRecord, FantopeIterate, GameSolution};
use crate::kernels::KernelSpec;
use crate::nystrom::NystromMap;
use crate::preimage::{Affine, LayerNorm, PreimageNet};

pub const MAGIC: &[u8; 4] = b"KCE1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn vector(name: &str, v: &[f64]) -> Self {
        Array {
            name: name.into(),
            shape: vec![v.len() as u64],
            data: v.to_vec(),
        }
    }

    pub fn matrix(name: &str, m: &DMatrix<f64>) -> Self {
        let data = m.transpose().as_slice().to_vec();
        Array {
            name: name.into(),
            shape: vec![m.nrows() as u64, m.ncols() as u64],
            data,
        }
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        if self.shape.len() != 1 {
            return Err(Error::Format(format!(
                "array {} is not a vector",
                self.name
            )));
        }
        Ok(DVector::from_vec(self.data.clone()))
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.shape.len() != 2 {
            return Err(Error::Format(format!(
                "array {} is not a matrix",
                self.name
            )));
        }
        Ok(DMatrix::from_row_slice(
            self.shape[0] as usize,
            self.shape[1] as usize,
            &self.data,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub metadata: String,
    pub arrays: Vec<Array>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Section {
            name: name.into(),
            ..Section::default()
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata
            .push_str(&format!("{key}={}\n", value.to_string()));
        self
    }

    pub fn with_array(mut self, array: Array) -> Self {
        self.arrays.push(array);
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .lines()
            .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
    }

    fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("section {} lacks metadata {key}", self.name)))
    }

    fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.require_meta(key)?
            .parse()
            .map_err(|_| Error::Format(format!("bad metadata {key} in section {}", self.name)))
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("section {} lacks array {name}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub version: u32,
    pub sections: Vec<Section>,
}

impl Default for Container {
    fn default() -> Self {
        Container {
            version: VERSION,
            sections: Vec::new(),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("truncated KCE1 data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid UTF-8 in KCE1 string".into()))
    }
}

impl Container {
    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("missing section {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        put_u32(&mut out, self.sections.len() as u32);
        for s in &self.sections {
            put_str(&mut out, &s.name);
            put_str(&mut out, &s.metadata);
            put_u32(&mut out, s.arrays.len() as u32);
            for a in &s.arrays {
                let expected: u64 = a.shape.iter().product();
                if expected != a.data.len() as u64 {
                    return Err(Error::Format(format!(
                        "array {} has shape {:?} but {} values",
                        a.name,
                        a.shape,
                        a.data.len()
                    )));
                }
                put_str(&mut out, &a.name);
                put_u32(&mut out, a.shape.len() as u32);
                for d in &a.shape {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                for v in &a.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a KCE1 file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("KCE1 checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version > VERSION {
            return Err(Error::Format(format!(
                "KCE1 version {version} is newer than supported version {VERSION}"
            )));
        }
        let n_sections = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..n_sections {
            let name = r.string()?;
            let metadata = r.string()?;
            let n_arrays = r.u32()?;
            let mut arrays = Vec::new();
            for _ in 0..n_arrays {
                let aname = r.string()?;
                let ndim = r.u32()? as usize;
                let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                let count = shape
                    .iter()
                    .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                    .filter(|&c| c.saturating_mul(8) <= (body.len() - r.pos) as u64)
                    .ok_or_else(|| Error::Format(format!("array {aname} overruns the file")))?;
                let raw = r.take(count as usize * 8)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                arrays.push(Array {
                    name: aname,
                    shape,
                    data,
                });
            }
            sections.push(Section {
                name,
                metadata,
                arrays,
            });
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in KCE1 data".into()));
        }
        Ok(Container { version, sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn nystrom_section(map: &NystromMap) -> Section {
    Section::new("nystrom")
        .with_meta("kernel", &map.kernel)
        .with_meta("drop_tolerance", format!("{:?}", map.drop_tolerance))
        .with_array(Array::matrix("landmarks", &map.landmarks))
        .with_array(Array::matrix("eigvecs", &map.eigvecs))
        .with_array(Array::vector("eigvals", map.eigvals.as_slice()))
}

pub fn nystrom_from_section(s: &Section) -> Result<NystromMap> {
    let kernel: KernelSpec = s.require_meta("kernel")?.parse()?;
    NystromMap::from_parts(
        s.array("landmarks")?.to_matrix()?,
        kernel,
        s.array("eigvecs")?.to_matrix()?,
        s.array("eigvals")?.to_vector()?,
        s.parse_meta("drop_tolerance")?,
    )
}

pub fn game_section(sol: &GameSolution) -> Section {
    let steps: Vec<f64> = sol.history.iter().map(|h| h.step as f64).collect();
    let accs: Vec<f64> = sol.history.iter().map(|h| h.dev_accuracy).collect();
    Section::new("game")
        .with_meta("k", sol.b.k)
        .with_meta("selected_step", sol.selected_step)
        .with_array(Array::vector("theta", sol.theta.as_slice()))
        .with_array(Array::matrix("b", &sol.b.b))
        .with_array(Array::matrix("w", &sol.w))
        .with_array(Array::matrix("p", &sol.p))
        .with_array(Array::vector("history_step", &steps))
        .with_array(Array::vector("history_accuracy", &accs))
}

pub fn game_from_section(s: &Section) -> Result<GameSolution> {
    let steps = &s.array("history_step")?.data;
    let accs = &s.array("history_accuracy")?.data;
    if steps.len() != accs.len() {
        return Err(Error::Format("game history arrays differ in length".into()));
    }
    Ok(GameSolution {
        theta: s.array("theta")?.to_vector()?,
        b: FantopeIterate {
            b: s.array("b")?.to_matrix()?,
            k: s.parse_meta("k")?,
        },
        w: s.array("w")?.to_matrix()?,
        p: s.array("p")?.to_matrix()?,
        history: steps
            .iter()
            .zip(accs)
            .map(|(&st, &a)| EvalRecord {
                step: st as usize,
                dev_accuracy: a,
            })
            .collect(),
        selected_step: s.parse_meta("selected_step")?,
    })
}

pub fn preimage_section(net: &PreimageNet) -> Section {
    Section::new("preimage")
        .with_meta("dropout", format!("{:?}", net.dropout))
        .with_meta("skip", "true")
        .with_array(Array::matrix("hidden1.weight", &net.hidden1.weight))
        .with_array(Array::vector("hidden1.bias", net.hidden1.bias.as_slice()))
        .with_array(Array::vector("norm1.gain", net.norm1.gain.as_slice()))
        .with_array(Array::vector("norm1.bias", net.norm1.bias.as_slice()))
        .with_array(Array::matrix("hidden2.weight", &net.hidden2.weight))
        .with_array(Array::vector("hidden2.bias", net.hidden2.bias.as_slice()))
        .with_array(Array::vector("norm2.gain", net.norm2.gain.as_slice()))
        .with_array(Array::vector("norm2.bias", net.norm2.bias.as_slice()))
        .with_array(Array::matrix("output.weight", &net.output.weight))
        .with_array(Array::vector("output.bias", net.output.bias.as_slice()))
}

pub fn preimage_from_section(s: &Section) -> Result<PreimageNet> {
    let affine = |prefix: &str| -> Result<Affine> {
        Ok(Affine {
            weight: s.array(&format!("{prefix}.weight"))?.to_matrix()?,
            bias: s.array(&format!("{prefix}.bias"))?.to_vector()?,
        })
    };
    let norm = |prefix: &str| -> Result<LayerNorm> {
        Ok(LayerNorm {
            gain: s.array(&format!("{prefix}.gain"))?.to_vector()?,
            bias: s.array(&format!("{prefix}.bias"))?.to_vector()?,
        })
    };
    let net = PreimageNet {
        hidden1: affine("hidden1")?,
        norm1: norm("norm1")?,
        hidden2: affine("hidden2")?,
        norm2: norm("norm2")?,
        output: affine("output")?,
        dropout: s.parse_meta("dropout")?,
    };
    let (h1, h2) = net.hidden_sizes();
    let d = net.input_dim();
    let shapes_ok = net.hidden1.bias.len() == h1
        && net.norm1.gain.len() == h1
        && net.norm1.bias.len() == h1
        && net.hidden2.weight.ncols() == h1
        && net.hidden2.bias.len() == h2
        && net.norm2.gain.len() == h2
        && net.norm2.bias.len() == h2
        && net.output.weight.shape() == (d, h2)
        && net.output.bias.len() == d;
    if !shapes_ok {
        return Err(Error::Format("inconsistent pre-image layer shapes".into()));
    }
    Ok(net)
}

/// Stores a `key=value` config snapshot (each line prefixed with `cfg.`)
/// together with its SHA-256.
pub fn config_section(snapshot: &str) -> Section {
    let mut section = Section::new("config").with_meta("sha256", config_hash(snapshot));
    for line in snapshot.lines() {
        section.metadata.push_str(&format!("cfg.{line}\n"));
    }
    section
}

pub fn config_hash(snapshot: &str) -> String {
    hex::encode(Sha256::digest(snapshot.as_bytes()))
}
