//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LNKT" | u32 version | [u8; 32] sha256(model config JSON)
//! u64 n | model config JSON
//! u64 tensors | per tensor: u64 len, len × f32
//! u64 layers  | per layer:  u64 len, len × f32 mean, len × f32 var
//! u8 has_state
//!   u64 n | train config JSON
//!   u64 epoch | u64 step | f64 loss scale | u32 clean steps | u64 seed
//!   u8 has_best [f64 best]
//!   u64 tensors | per tensor: u64 len, len × f32 velocity
//! ```

use std::fs;
use std::path::Path;

use lanekit_core::model::{Model, ModelConfig, RunningStats};
use lanekit_core::train::{LossScaler, TrainConfig, TrainState};
use lanekit_core::{DType, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LNKT";
pub const VERSION: u32 = 1;

/// SHA-256 of the canonical JSON form of a model configuration.
pub fn config_digest(cfg: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).into()
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    /// Optimizer state and the training configuration that produced it.
    pub train: Option<(TrainState, TrainConfig)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, v: &[f64]) {
        for &x in v {
            self.0.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
}

pub fn encode(model: &Model, train: Option<(&TrainState, &TrainConfig)>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let json = serde_json::to_vec(model.config()).expect("config serializes");
    w.0.extend_from_slice(&Sha256::digest(&json));
    w.bytes(&json);
    w.u64(model.params().len() as u64);
    for p in model.params() {
        w.u64(p.len() as u64);
        w.f32s(p.data());
    }
    w.u64(model.running_stats().len() as u64);
    for r in model.running_stats() {
        w.u64(r.mean.len() as u64);
        w.f32s(&r.mean);
        w.f32s(&r.var);
    }
    match train {
        None => w.u8(0),
        Some((s, cfg)) => {
            w.u8(1);
            w.bytes(&serde_json::to_vec(cfg).expect("config serializes"));
            w.u64(s.epoch as u64);
            w.u64(s.step);
            w.f64(s.scaler.scale);
            w.u32(s.scaler.clean_steps);
            w.u64(s.seed);
            match s.best_val {
                Some(b) => {
                    w.u8(1);
                    w.f64(b);
                }
                None => w.u8(0),
            }
            w.u64(s.velocity.len() as u64);
            for v in &s.velocity {
                w.u64(v.len() as u64);
                w.f32s(v.data());
            }
        }
    }
    w.0
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.b.len())
            .ok_or_else(|| Error::format(self.path, format!("implausible length {n}")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

/// Decode a checkpoint. When `expected` is given its digest must match the
/// stored one.
pub fn decode(bytes: &[u8], path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let mut r = Reader { b: bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not a lanekit checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let json = r.bytes()?;
    if <[u8; 32]>::from(Sha256::digest(json)) != digest {
        return Err(Error::format(path, "stored configuration does not match its digest"));
    }
    if let Some(cfg) = expected {
        if config_digest(cfg) != digest {
            return Err(Error::DigestMismatch { path: path.to_path_buf() });
        }
    }
    let config: ModelConfig =
        serde_json::from_slice(json).map_err(|e| Error::format(path, format!("stored configuration: {e}")))?;
    let n = r.len()?;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.len()?;
        params.push(r.f32s(len)?);
    }
    let n = r.len()?;
    let mut running = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.len()?;
        let mean = r.f32s(len)?;
        let var = r.f32s(len)?;
        running.push(RunningStats { mean, var });
    }
    let model = Model::from_parts(config, params, running)?;
    let train = match r.u8()? {
        0 => None,
        1 => {
            let cfg: TrainConfig = serde_json::from_slice(r.bytes()?)
                .map_err(|e| Error::format(path, format!("stored training configuration: {e}")))?;
            let epoch = r.u64()? as usize;
            let step = r.u64()?;
            let scale = r.f64()?;
            let clean_steps = r.u32()?;
            let seed = r.u64()?;
            let best_val = match r.u8()? {
                0 => None,
                _ => Some(r.f64()?),
            };
            let n = r.len()?;
            if n != model.params().len() {
                return Err(Error::format(path, "velocity count does not match the parameters"));
            }
            let mut velocity = Vec::with_capacity(n);
            for p in model.params() {
                let len = r.len()?;
                if len != p.len() {
                    return Err(Error::format(path, "velocity length does not match its parameter"));
                }
                velocity.push(Tensor::new(p.shape(), r.f32s(len)?, DType::F32)?);
            }
            let state = TrainState {
                velocity,
                epoch,
                step,
                scaler: LossScaler { scale, clean_steps },
                seed,
                best_val,
            };
            Some((state, cfg))
        }
        f => return Err(Error::format(path, format!("bad trainer-state flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { model, train })
}

pub fn save(path: &Path, model: &Model, train: Option<(&TrainState, &TrainConfig)>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // write then rename so a crash never leaves a torn checkpoint
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(model, train)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path, expected)
}
