//! Model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"ESTM" | version u32 | sha256(config json) [32]
//! meta_len u32 | meta json (config, epoch, step, loss, precision)
//! blob_count u32
//! per blob: name_len u32 | name utf-8 | dtype u8 (0 = f32, 1 = f64)
//!           ndim u32 | dims u32 * ndim | values
//! ```
//!
//! Blobs hold every parameter by name, followed by the optimizer moments
//! as `adam.m/<name>` and `adam.v/<name>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"ESTM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Effective experiment configuration as JSON.
    pub config: serde_json::Value,
    /// Completed training epochs.
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub precision: Precision,
}

pub fn config_digest(config: &serde_json::Value) -> [u8; 32] {
    Sha256::digest(config.to_string().as_bytes()).into()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(match T::PRECISION {
        Precision::F32 => 0,
        Precision::F64 => 1,
    });
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        match T::PRECISION {
            Precision::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
}

pub fn encode<T: Real>(store: &ParamStore<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    out.extend_from_slice(&config_digest(&meta.config));
    let meta_json = serde_json::to_vec(meta)?;
    put_u32(&mut out, meta_json.len() as u32);
    out.extend_from_slice(&meta_json);
    put_u32(&mut out, 3 * store.len() as u32);
    for id in store.ids() {
        put_blob(&mut out, store.name(id), store.value(id));
    }
    for id in store.ids() {
        let (m, v) = store.moments(id);
        put_blob(&mut out, &format!("adam.m/{}", store.name(id)), m);
        put_blob(&mut out, &format!("adam.v/{}", store.name(id)), v);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn corrupt(&self, msg: String) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            msg,
        }
    }
}

/// A decoded checkpoint with values widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub blobs: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    let found: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found,
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION,
        });
    }
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| r.corrupt(format!("bad metadata: {e}")))?;
    if config_digest(&meta.config) != digest {
        return Err(r.corrupt("configuration digest mismatch".into()));
    }
    let count = r.u32()? as usize;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| r.corrupt("blob name is not UTF-8".into()))?
            .to_string();
        let dtype = r.take(1)?[0];
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = match dtype {
            0 => r
                .take(4 * len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            1 => r
                .take(8 * len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            other => return Err(r.corrupt(format!("blob {name}: unknown dtype {other}"))),
        };
        blobs.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { meta, blobs })
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode(store, meta)?;
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

impl Checkpoint {
    /// Copies parameters, moments and step into `store`, whose names and
    /// shapes must match exactly.
    pub fn restore<T: Real>(&self, store: &mut ParamStore<T>, path: &Path) -> Result<()> {
        if self.meta.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "{} holds {} parameters but the run uses {}",
                path.display(),
                self.meta.precision.as_str(),
                T::PRECISION.as_str()
            )));
        }
        let lookup: std::collections::HashMap<&str, (&Vec<usize>, &Vec<f64>)> =
            self.blobs.iter().map(|(n, s, d)| (n.as_str(), (s, d))).collect();
        if lookup.len() != 3 * store.len() {
            return Err(Error::Config(format!(
                "{} has {} blobs, model expects {}",
                path.display(),
                lookup.len(),
                3 * store.len()
            )));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let (s, d) = lookup
                .get(name)
                .ok_or_else(|| Error::Config(format!("{} lacks parameter {name}", path.display())))?;
            if s.as_slice() != shape {
                return Err(Error::Config(format!(
                    "{}: parameter {name} has shape {s:?}, model expects {shape:?}",
                    path.display()
                )));
            }
            Tensor::new(shape, d.iter().map(|&v| T::of(v)).collect())
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = fetch(&name, &shape)?;
            let m = fetch(&format!("adam.m/{name}"), &shape)?;
            let v = fetch(&format!("adam.v/{name}"), &shape)?;
            store.set_optimizer_state(id, m, v)?;
        }
        store.set_step(self.meta.step);
        Ok(())
    }
}
