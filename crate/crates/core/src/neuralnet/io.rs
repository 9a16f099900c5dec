//! Versioned binary model file: magic string, a spec descriptor block, then
//! raw little-endian 32-bit float parameter blocks in declaration order
//! (conv weights + bias per block, dense weights, dense bias), plus a JSON
//! sidecar with the spec and training provenance.

use super::{BlockSpec, ChannelNorm, ConvParams, Model, ModelSpec, Params};
use crate::volgrid::io::write_atomic;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"VXRCNET1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad model file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub spec: ModelSpec,
    pub init_seed: u64,
    pub provenance: serde_json::Value,
}

fn io_err(path: &Path, source: std::io::Error) -> ModelIoError {
    ModelIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> ModelIoError {
    ModelIoError::Malformed {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_block(&mut self, values: &[f64]) {
        self.u32(values.len() as u32);
        for &v in values {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32_block(&mut self) -> Option<Vec<f64>> {
        let n = self.u32()? as usize;
        let bytes = self.take(n * 4)?;
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        )
    }
}

/// Write `<path>` (binary weights) and `<path>.json` (sidecar).
pub fn save_model(
    path: &Path,
    model: &Model,
    provenance: serde_json::Value,
) -> Result<(), ModelIoError> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let spec = &model.spec;
    w.u32(spec.input_channels as u32);
    w.u32(spec.patch_size as u32);
    w.u32(spec.n_logits as u32);
    w.u32(spec.blocks.len() as u32);
    for b in &spec.blocks {
        w.u32(b.width as u32);
        w.u32(b.stride as u32);
    }
    w.u32(spec.channel_norm.len() as u32);
    for n in &spec.channel_norm {
        w.f64(n.offset);
        w.f64(n.scale);
    }
    w.u64(model.params.init_seed);
    for conv in &model.params.conv {
        w.f32_block(&conv.weights);
        w.f32_block(&conv.bias);
    }
    w.f32_block(&model.params.dense_w);
    w.f32_block(&model.params.dense_b);
    write_atomic(path, &w.buf).map_err(|e| io_err(path, e))?;

    let sidecar = ModelSidecar {
        spec: spec.clone(),
        init_seed: model.params.init_seed,
        provenance,
    };
    let spath = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&spath, text.as_bytes()).map_err(|e| io_err(&spath, e))?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

pub fn load_model(path: &Path) -> Result<Model, ModelIoError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(8).ok_or_else(|| malformed(path, "truncated magic"))?;
    if magic != MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let version = r.u32().ok_or_else(|| malformed(path, "truncated version"))?;
    if version != VERSION {
        return Err(malformed(path, format!("unsupported version {version}")));
    }
    let next_u32 = |r: &mut Reader, what: &str| -> Result<u32, ModelIoError> {
        r.u32().ok_or_else(|| malformed(path, format!("truncated {what}")))
    };
    let input_channels = next_u32(&mut r, "input channels")? as usize;
    let patch_size = next_u32(&mut r, "patch size")? as usize;
    let n_logits = next_u32(&mut r, "logits")? as usize;
    let n_blocks = next_u32(&mut r, "block count")? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let width = next_u32(&mut r, "block width")? as usize;
        let stride = next_u32(&mut r, "block stride")? as usize;
        blocks.push(BlockSpec { width, stride });
    }
    let n_norms = next_u32(&mut r, "norm count")? as usize;
    let mut channel_norm = Vec::with_capacity(n_norms);
    for _ in 0..n_norms {
        let offset = r.f64().ok_or_else(|| malformed(path, "truncated norm"))?;
        let scale = r.f64().ok_or_else(|| malformed(path, "truncated norm"))?;
        channel_norm.push(ChannelNorm { offset, scale });
    }
    let init_seed = r.u64().ok_or_else(|| malformed(path, "truncated seed"))?;
    let spec = ModelSpec {
        input_channels,
        patch_size,
        blocks,
        n_logits,
        channel_norm,
    };
    spec.validate()
        .map_err(|e| malformed(path, format!("inconsistent spec: {e}")))?;

    let mut conv = Vec::with_capacity(n_blocks);
    let mut in_channels = input_channels;
    for (k, b) in spec.blocks.iter().enumerate() {
        let weights = r
            .f32_block()
            .ok_or_else(|| malformed(path, format!("truncated block {k} weights")))?;
        let bias = r
            .f32_block()
            .ok_or_else(|| malformed(path, format!("truncated block {k} bias")))?;
        if weights.len() != b.width * in_channels * 27 || bias.len() != b.width {
            return Err(malformed(path, format!("block {k} shape mismatch")));
        }
        conv.push(ConvParams {
            weights,
            bias,
            in_channels,
            out_channels: b.width,
        });
        in_channels = b.width;
    }
    let dense_w = r
        .f32_block()
        .ok_or_else(|| malformed(path, "truncated dense weights"))?;
    let dense_b = r
        .f32_block()
        .ok_or_else(|| malformed(path, "truncated dense bias"))?;
    if dense_w.len() != n_logits * spec.feature_dim() || dense_b.len() != n_logits {
        return Err(malformed(path, "dense shape mismatch"));
    }
    Ok(Model {
        spec,
        params: Params {
            conv,
            dense_w,
            dense_b,
            init_seed,
        },
    })
}
