//! Self-describing little-endian model checkpoints.
//!
//! ```text
//! "FCNC"            magic
//! u32               format version (1)
//! u32               layer count, then per layer:
//!   u8 kind         0 conv, 1 relu, 2 maxpool, 3 deconv, 4 softmax-loss
//!   6 × u32         conv/deconv: kernel_h kernel_w in out stride padding
//!   2 × u32         maxpool: window stride
//! u8                optimizer: 1 sgd, 2 adam
//! u64               completed optimizer steps
//! f32 × …           parameter tensors in declaration order (weight, bias per layer)
//! f32 × …           adam only: first moments, then second moments, same shapes
//! ```
//! Tensor shapes are implied by the architecture and are not stored.

use std::path::Path;

use super::optim::{AdamMoments, OptimizerState};
use crate::fcn::model::parameter_shapes;
use crate::fcn::{ConvSpec, FcnError, FcnModel, LayerSpec};
use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FCNC";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated in header at byte {offset}")]
    TruncatedHeader { offset: usize },
    #[error("checkpoint truncated in tensor {index}: needs {needed} bytes, {available} remain")]
    TruncatedTensor { index: usize, needed: usize, available: usize },
    #[error("unknown layer kind {kind} at byte {offset}")]
    UnknownLayer { offset: usize, kind: u8 },
    #[error("unknown optimizer tag {0}")]
    UnknownOptimizer(u8),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("optimizer state does not match the model: {0}")]
    InconsistentState(String),
    #[error(transparent)]
    Architecture(#[from] FcnError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn layer_code(layer: &LayerSpec) -> u8 {
    match layer {
        LayerSpec::Conv(_) => 0,
        LayerSpec::Relu => 1,
        LayerSpec::MaxPool { .. } => 2,
        LayerSpec::Deconv(_) => 3,
        LayerSpec::SoftmaxLoss => 4,
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[Tensor]) {
    for t in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(model: &FcnModel, state: &OptimizerState) -> Result<Vec<u8>, CheckpointError> {
    let params = model.parameters();
    let mut out = Vec::with_capacity(64 + 12 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, model.layers().len());
    for layer in model.layers() {
        out.push(layer_code(layer));
        match layer {
            LayerSpec::Conv(c) | LayerSpec::Deconv(c) => {
                for v in [c.kernel_h, c.kernel_w, c.in_channels, c.out_channels, c.stride, c.padding] {
                    put_u32(&mut out, v);
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                put_u32(&mut out, *window);
                put_u32(&mut out, *stride);
            }
            LayerSpec::Relu | LayerSpec::SoftmaxLoss => {}
        }
    }
    match state {
        OptimizerState::Sgd { step } => {
            out.push(1);
            out.extend_from_slice(&step.to_le_bytes());
            put_tensors(&mut out, params);
        }
        OptimizerState::Adam { step, moments } => {
            let shapes = |ts: &[Tensor]| ts.iter().map(Tensor::shape).collect::<Vec<_>>();
            if shapes(&moments.first) != shapes(params) || shapes(&moments.second) != shapes(params) {
                return Err(CheckpointError::InconsistentState("adam moments are not shaped like the parameters".into()));
            }
            out.push(2);
            out.extend_from_slice(&step.to_le_bytes());
            put_tensors(&mut out, params);
            put_tensors(&mut out, &moments.first);
            put_tensors(&mut out, &moments.second);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::TruncatedHeader { offset: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, index: usize, shape: [usize; 4]) -> Result<Tensor, CheckpointError> {
        let count: usize = shape.iter().product();
        let needed = count * 4;
        let available = self.bytes.len() - self.pos;
        if needed > available {
            return Err(CheckpointError::TruncatedTensor { index, needed, available });
        }
        let values = self.bytes[self.pos..self.pos + needed]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        self.pos += needed;
        Ok(Tensor::from_vec(shape, values)?)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FcnModel, OptimizerState), CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let offset = r.pos;
        let layer = match r.u8()? {
            code @ (0 | 3) => {
                let mut f = [0usize; 6];
                for v in &mut f {
                    *v = r.u32()? as usize;
                }
                let spec = ConvSpec {
                    kernel_h: f[0],
                    kernel_w: f[1],
                    in_channels: f[2],
                    out_channels: f[3],
                    stride: f[4],
                    padding: f[5],
                };
                if code == 0 { LayerSpec::Conv(spec) } else { LayerSpec::Deconv(spec) }
            }
            1 => LayerSpec::Relu,
            2 => LayerSpec::MaxPool { window: r.u32()? as usize, stride: r.u32()? as usize },
            4 => LayerSpec::SoftmaxLoss,
            kind => return Err(CheckpointError::UnknownLayer { offset, kind }),
        };
        layers.push(layer);
    }
    let tag = r.u8()?;
    let step = r.u64()?;
    if tag != 1 && tag != 2 {
        return Err(CheckpointError::UnknownOptimizer(tag));
    }
    let shapes = parameter_shapes(&layers);
    let mut index = 0;
    let mut read_set = |r: &mut Reader| -> Result<Vec<Tensor>, CheckpointError> {
        shapes
            .iter()
            .map(|&shape| {
                let t = r.tensor(index, shape);
                index += 1;
                t
            })
            .collect()
    };
    let params = read_set(&mut r)?;
    let state = if tag == 1 {
        OptimizerState::Sgd { step }
    } else {
        let first = read_set(&mut r)?;
        let second = read_set(&mut r)?;
        OptimizerState::Adam { step, moments: AdamMoments { first, second } }
    };
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok((FcnModel::from_parts(layers, params)?, state))
}

pub fn save_checkpoint(model: &FcnModel, state: &OptimizerState, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(model, state)?;
    write_atomic(path, &bytes).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(FcnModel, OptimizerState), CheckpointError> {
    let bytes =
        std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode_checkpoint(&bytes)
}
