//! Shared checkpoint directory format: `manifest.json` describing tensor
//! names, shapes and byte offsets, plus `weights.bin` holding raw
//! little-endian f32 values in manifest order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, Params};
use crate::scalar::Scalar;

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub kind: String,
    pub dtype: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codec_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// FNV-1a over a byte stream; stable and dependency-free.
#[derive(Debug, Clone)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Self(0xcbf29ce484222325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }

    pub fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn hash_str(s: &str) -> String {
    let mut h = Fnv1a::new();
    h.update(s.as_bytes());
    h.hex()
}

fn param_bytes<T: Scalar>(p: &Param<T>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(p.len() * 4);
    for &v in &p.w {
        bytes.extend_from_slice(&v.to_f32_s().to_le_bytes());
    }
    bytes
}

/// Content hash of a module's weights, taken over the same f32 LE byte
/// stream that the checkpoint stores.
pub fn params_hash<T: Scalar, M: Params<T> + ?Sized>(module: &M) -> String {
    let mut h = Fnv1a::new();
    module.visit(&mut |p| h.update(&param_bytes(p)));
    h.hex()
}

pub struct CheckpointWriter {
    entries: Vec<TensorEntry>,
    bytes: Vec<u8>,
}

impl CheckpointWriter {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            bytes: Vec::new(),
        }
    }

    pub fn add_module<T: Scalar, M: Params<T> + ?Sized>(&mut self, module: &M) {
        module.visit(&mut |p| {
            let data = param_bytes(p);
            self.entries.push(TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                offset: self.bytes.len() as u64,
                len: p.len() as u64,
            });
            self.bytes.extend_from_slice(&data);
        });
    }

    /// Hash of everything added so far.
    pub fn content_hash(&self) -> String {
        let mut h = Fnv1a::new();
        h.update(&self.bytes);
        h.hex()
    }

    pub fn write(self, dir: &Path, mut manifest: CheckpointManifest) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        manifest.tensors = self.entries;
        let mf = File::create(dir.join(MANIFEST_FILE))?;
        let mut w = BufWriter::new(mf);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.flush()?;
        let wf = File::create(dir.join(WEIGHTS_FILE))?;
        let mut w = BufWriter::new(wf);
        w.write_all(&self.bytes)?;
        w.flush()?;
        Ok(())
    }
}

impl Default for CheckpointWriter {
    fn default() -> Self {
        Self::new()
    }
}

pub struct CheckpointReader {
    pub manifest: CheckpointManifest,
    bytes: Vec<u8>,
}

impl CheckpointReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let mfile = File::open(&mpath).map_err(|_| Error::FileMissing(mpath.clone()))?;
        let manifest: CheckpointManifest = serde_json::from_reader(mfile)
            .map_err(|e| Error::CheckpointError(format!("{}: {e}", mpath.display())))?;
        if manifest.dtype != "f32" {
            return Err(Error::CheckpointError(format!(
                "unsupported dtype {}",
                manifest.dtype
            )));
        }
        let wpath = dir.join(WEIGHTS_FILE);
        let mut wfile = File::open(&wpath).map_err(|_| Error::FileMissing(wpath.clone()))?;
        let mut bytes = Vec::new();
        wfile.read_to_end(&mut bytes)?;
        Ok(Self { manifest, bytes })
    }

    /// Load tensors into `module`, matching by traversal order; names and
    /// shapes must agree exactly with the manifest entries consumed.
    pub fn load_module<T: Scalar, M: Params<T> + ?Sized>(
        &self,
        module: &mut M,
        cursor: &mut usize,
    ) -> Result<()> {
        let mut failure: Option<Error> = None;
        module.visit_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            let Some(entry) = self.manifest.tensors.get(*cursor) else {
                failure = Some(Error::CheckpointError(format!(
                    "missing tensor for {}",
                    p.name
                )));
                return;
            };
            *cursor += 1;
            if entry.name != p.name || entry.shape != p.shape {
                failure = Some(Error::CheckpointError(format!(
                    "tensor mismatch: module has {} {:?}, checkpoint has {} {:?}",
                    p.name, p.shape, entry.name, entry.shape
                )));
                return;
            }
            let start = entry.offset as usize;
            let end = start + entry.len as usize * 4;
            if end > self.bytes.len() {
                failure = Some(Error::CheckpointError(format!(
                    "weights.bin truncated at {}",
                    p.name
                )));
                return;
            }
            for (i, chunk) in self.bytes[start..end].chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                p.w[i] = T::of_f32(v);
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Hash of a contiguous tensor range, as stored on disk.
    pub fn range_hash(&self, first: usize, count: usize) -> Result<String> {
        let entries = &self.manifest.tensors;
        if first + count > entries.len() {
            return Err(Error::CheckpointError("tensor range out of bounds".into()));
        }
        let start = entries[first].offset as usize;
        let last = &entries[first + count - 1];
        let end = last.offset as usize + last.len as usize * 4;
        let mut h = Fnv1a::new();
        h.update(&self.bytes[start..end]);
        Ok(h.hex())
    }
}
