//! Single-file checkpoint container.
//!
//! Layout (little endian): magic, format version, dtype tag, config echo,
//! named `u64` counters, named tensors, then a SHA-256 of everything before
//! it. Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::path::Path;

use dualgan_tensor::{Scalar, Tensor};
use sha2::{Digest, Sha256};

use super::{Adam, NetworkId, TrainState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DUALGANC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config_echo: String,
    pub counters: Vec<(String, u64)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid utf-8 string".to_string())
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn counter(&self, name: &str) -> Option<u64> {
        self.counters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, T::DTYPE);
        put_str(&mut out, &self.config_echo);
        put_u64(&mut out, self.counters.len() as u64);
        for (name, v) in &self.counters {
            put_str(&mut out, name);
            put_u64(&mut out, *v);
        }
        put_u64(&mut out, self.tensors.len() as u64);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            for d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            for &v in t.data() {
                v.to_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err("checksum mismatch (corrupt file)".into());
        }
        let mut r = Reader { bytes: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("format version {version}, expected {CHECKPOINT_VERSION}"));
        }
        let dtype = r.string()?;
        if dtype != T::DTYPE {
            return Err(format!("stored as {dtype}, expected {}", T::DTYPE));
        }
        let config_echo = r.string()?;
        let counters = (0..r.u64()?).map(|_| Ok((r.string()?, r.u64()?))).collect::<std::result::Result<Vec<_>, String>>()?;
        let n = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let name = r.string()?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.u64()? as usize;
            }
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor too large")?;
            let raw = r.take(count.checked_mul(T::BYTES).ok_or("tensor too large")?)?;
            let data = raw.chunks_exact(T::BYTES).map(T::from_le).collect();
            tensors.push((name, Tensor::from_vec(shape, data).map_err(|e| e.to_string())?));
        }
        if r.pos != body.len() {
            return Err("trailing bytes".into());
        }
        Ok(Self { config_echo, counters, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint { path: path.to_path_buf(), reason })
    }
}

impl<T: Scalar> TrainState<T> {
    pub fn to_checkpoint(&self, config_echo: &str) -> Checkpoint<T> {
        let mut counters = vec![("iteration".to_string(), self.iteration), ("seed".to_string(), self.seed)];
        let mut tensors = Vec::new();
        for id in NetworkId::ALL {
            let key = id.key();
            let opt = &self.optimizers[id.index()];
            counters.push((format!("{key}/adam_step"), opt.step));
            for (i, (name, t)) in self.networks.params(id).iter().enumerate() {
                tensors.push((format!("{key}/param/{name}"), t.clone()));
                tensors.push((format!("{key}/adam_m/{name}"), opt.m[i].clone()));
                tensors.push((format!("{key}/adam_v/{name}"), opt.v[i].clone()));
            }
        }
        Checkpoint { config_echo: config_echo.to_string(), counters, tensors }
    }

    /// Overwrites this state (built from the same configuration) with the
    /// checkpoint contents; every name and shape must match.
    pub fn restore(&mut self, ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
        let err = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
        let counter = |name: &str| ckpt.counter(name).ok_or_else(|| err(format!("missing counter {name}")));
        let expected: usize = NetworkId::ALL.iter().map(|&id| 3 * self.networks.params(id).len()).sum();
        if ckpt.tensors.len() != expected {
            return Err(err(format!("{} tensors stored, model has {expected}", ckpt.tensors.len())));
        }
        let mut restored = self.clone();
        restored.iteration = counter("iteration")?;
        restored.seed = counter("seed")?;
        for id in NetworkId::ALL {
            let key = id.key();
            let names: Vec<String> = self.networks.params(id).names().map(str::to_string).collect();
            let mut opt: Adam<T> = self.optimizers[id.index()].clone();
            opt.step = counter(&format!("{key}/adam_step"))?;
            for (i, name) in names.iter().enumerate() {
                let want = self.networks.params(id).tensor(i).shape();
                let fetch = |kind: &str| {
                    let full = format!("{key}/{kind}/{name}");
                    let t = ckpt.tensor(&full).ok_or_else(|| err(format!("missing tensor {full}")))?;
                    if t.shape() != want {
                        return Err(err(format!("shape mismatch for {full}: stored {:?}, model {want:?}", t.shape())));
                    }
                    Ok(t.clone())
                };
                *restored.networks.params_mut(id).tensor_mut(i) = fetch("param")?;
                opt.m[i] = fetch("adam_m")?;
                opt.v[i] = fetch("adam_v")?;
            }
            restored.optimizers[id.index()] = opt;
        }
        *self = restored;
        Ok(())
    }
}
