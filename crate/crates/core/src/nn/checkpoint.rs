//! Binary checkpoint files with a JSON metadata sidecar.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "QRLCKPT\0"
//! version    u32      1
//! iteration  u64
//! count      u32      number of net records
//! record:
//!   name       u32 length + UTF-8 bytes
//!   kind       u8       0 gaussian policy, 1 categorical policy, 2 regressor
//!   sizes      u32 count + u32 layer widths
//!   params     u64 count + f64 values (per layer: row-major W, then b)
//!   log_std    u32 count + f64 values (empty unless gaussian)
//!   adam       u8 flag; if 1: u64 step, f64 lr, beta1, beta2, epsilon,
//!              u64 count + f64 first moments, u64 count + f64 second moments
//! ```
//!
//! The sidecar sits next to the binary file with a `.json` extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::Mlp;
use super::policy::{CategoricalPolicy, GaussianPolicy, Policy};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QRLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StoredNet {
    Policy(Policy),
    Regressor(Mlp),
}

impl StoredNet {
    pub fn mlp(&self) -> &Mlp {
        match self {
            StoredNet::Policy(p) => p.mlp(),
            StoredNet::Regressor(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub name: String,
    pub net: StoredNet,
    pub adam: Option<AdamState>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub nets: Vec<NetRecord>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s_long(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.data.len() - self.pos) / 8 {
            return Err(Error::Checkpoint(format!("array of {n} values overruns file")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn f64s_long(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        self.f64s(n)
    }
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Option<&NetRecord> {
        self.nets.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.u64(self.iteration);
        w.u32(self.nets.len());
        for rec in &self.nets {
            w.u32(rec.name.len());
            w.0.extend_from_slice(rec.name.as_bytes());
            let (kind, log_std): (u8, &[f64]) = match &rec.net {
                StoredNet::Policy(Policy::Gaussian(p)) => (0, &p.log_std),
                StoredNet::Policy(Policy::Categorical(_)) => (1, &[]),
                StoredNet::Regressor(_) => (2, &[]),
            };
            w.u8(kind);
            let mlp = rec.net.mlp();
            w.u32(mlp.sizes().len());
            mlp.sizes().iter().for_each(|s| w.u32(*s));
            w.f64s_long(mlp.params());
            w.u32(log_std.len());
            log_std.iter().for_each(|x| w.f64(*x));
            match &rec.adam {
                None => w.u8(0),
                Some(a) => {
                    w.u8(1);
                    w.u64(a.step);
                    for x in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
                        w.f64(x);
                    }
                    w.f64s_long(&a.m);
                    w.f64s_long(&a.v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let iteration = r.u64()?;
        let count = r.u32()?;
        let mut nets = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("net name is not UTF-8".into()))?;
            let kind = r.u8()?;
            let n_sizes = r.u32()?;
            if n_sizes > 64 {
                return Err(Error::Checkpoint(format!("{n_sizes} layers")));
            }
            let sizes: Vec<usize> = (0..n_sizes).map(|_| r.u32()).collect::<Result<_>>()?;
            let params = r.f64s_long()?;
            let mlp = Mlp::from_params(&sizes, params).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            let n_log_std = r.u32()?;
            let log_std = r.f64s(n_log_std)?;
            let net = match kind {
                0 => {
                    if log_std.len() != mlp.output_dim() {
                        return Err(Error::Checkpoint(format!("{name}: log-std length {}", log_std.len())));
                    }
                    StoredNet::Policy(Policy::Gaussian(GaussianPolicy { mean: mlp, log_std }))
                }
                1 => StoredNet::Policy(Policy::Categorical(CategoricalPolicy { logits: mlp })),
                2 => StoredNet::Regressor(mlp),
                k => return Err(Error::Checkpoint(format!("{name}: unknown net kind {k}"))),
            };
            let adam = match r.u8()? {
                0 => None,
                1 => {
                    let step = r.u64()?;
                    let learning_rate = r.f64()?;
                    let beta1 = r.f64()?;
                    let beta2 = r.f64()?;
                    let epsilon = r.f64()?;
                    let m = r.f64s_long()?;
                    let v = r.f64s_long()?;
                    if m.len() != v.len() {
                        return Err(Error::Checkpoint(format!("{name}: adam moment lengths differ")));
                    }
                    Some(AdamState {
                        learning_rate,
                        beta1,
                        beta2,
                        epsilon,
                        step,
                        m,
                        v,
                    })
                }
                f => return Err(Error::Checkpoint(format!("{name}: bad adam flag {f}"))),
            };
            nets.push(NetRecord { name, net, adam });
        }
        if r.pos != data.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", data.len() - r.pos)));
        }
        Ok(Checkpoint { iteration, nets })
    }

    /// Writes the binary file and its sidecar. Files are written under a
    /// temporary name and renamed into place.
    pub fn save(&self, path: &Path, metadata: &serde_json::Value) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_atomic(path, &self.to_bytes())?;
        let mut text = serde_json::to_string_pretty(metadata)?;
        text.push('\n');
        write_atomic(&sidecar_path(path), text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load_metadata(path: &Path) -> Result<serde_json::Value> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
