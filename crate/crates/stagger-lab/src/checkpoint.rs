//! Binary checkpoint format for trained f32 parameters.
//!
//! Layout (all integers little-endian):
//!   magic "SLABNET1" | version u32 | embed_rows u32 | embed_dim u32 |
//!   hidden_dim u32 | hidden_layers u32 | num_actions u32 |
//!   separate_value_net u8 | tensor_count u32 |
//!   per tensor: ndim u32, dims u32... |
//!   per tensor: f32 data, row-major, in the same order
//!
//! The decoder is strict: the shape table must match the architecture
//! implied by the header, every payload must be complete, and no trailing
//! bytes are tolerated.

use std::path::Path;

use thiserror::Error;

use crate::net::{NetworkConfig, NetworkParams};

pub const MAGIC: &[u8; 8] = b"SLABNET1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a parameter checkpoint)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated (needed {needed} more bytes)")]
    Truncated { needed: usize },
    #[error("{trailing} trailing bytes after the last tensor")]
    TrailingBytes { trailing: usize },
    #[error("architecture field {name} = {value} out of range")]
    BadArchitecture { name: &'static str, value: u64 },
    #[error("tensor {index}: shape table says {found:?}, architecture implies {expected:?}")]
    ShapeMismatch { index: usize, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor count {found}, architecture implies {expected}")]
    TensorCountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated { needed: n - (self.bytes.len() - self.pos) });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
}

/// Serializes f32 parameters into the checkpoint byte format.
pub fn encode(params: &NetworkParams<f32>) -> Vec<u8> {
    let entries = params.tensor_entries();
    let payload: usize = entries.iter().map(|(_, _, d)| d.len() * 4).sum();
    let mut out = Vec::with_capacity(64 + entries.len() * 16 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = &params.cfg;
    for field in [cfg.embed_rows, cfg.embed_dim, cfg.hidden_dim, cfg.hidden_layers, cfg.num_actions] {
        out.extend_from_slice(&u32::try_from(field).expect("architecture fits u32").to_le_bytes());
    }
    out.push(u8::from(cfg.separate_value_net));
    out.extend_from_slice(&u32::try_from(entries.len()).expect("tensor count fits u32").to_le_bytes());
    for (_, shape, _) in &entries {
        out.extend_from_slice(&u32::try_from(shape.len()).expect("ndim fits u32").to_le_bytes());
        for &dim in shape {
            out.extend_from_slice(&u32::try_from(dim).expect("dim fits u32").to_le_bytes());
        }
    }
    for (_, _, data) in &entries {
        for value in *data {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

/// Strict inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<NetworkParams<f32>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }

    let mut arch = [0usize; 5];
    let names = ["embed_rows", "embed_dim", "hidden_dim", "hidden_layers", "num_actions"];
    for (slot, name) in arch.iter_mut().zip(names) {
        let value = r.u32()?;
        if value == 0 || value > 1 << 16 {
            return Err(CheckpointError::BadArchitecture { name, value: value as u64 });
        }
        *slot = value as usize;
    }
    let separate = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(CheckpointError::BadArchitecture {
                name: "separate_value_net",
                value: other as u64,
            })
        }
    };
    // Cap the implied parameter count before allocating anything, so a
    // hostile header cannot request a giant buffer.
    let [rows, embed, hidden, layers, actions] = arch.map(|v| v as u64);
    let tower = rows * embed + embed * hidden + layers * (hidden * hidden + hidden);
    let implied = tower * if separate { 2 } else { 1 } + (actions + 1) * (hidden + 1);
    if implied > 1 << 26 {
        return Err(CheckpointError::BadArchitecture { name: "total parameters", value: implied });
    }
    let cfg = NetworkConfig {
        embed_rows: arch[0],
        embed_dim: arch[1],
        hidden_dim: arch[2],
        hidden_layers: arch[3],
        num_actions: arch[4],
        separate_value_net: separate,
    };

    let mut params = NetworkParams::<f32>::zeros(cfg);
    let expected: Vec<Vec<usize>> =
        params.tensor_entries().iter().map(|(_, shape, _)| shape.clone()).collect();

    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(CheckpointError::TensorCountMismatch { expected: expected.len(), found: count });
    }
    for (index, expected_shape) in expected.iter().enumerate() {
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(CheckpointError::ShapeMismatch {
                index,
                expected: expected_shape.clone(),
                found: vec![ndim],
            });
        }
        let mut found = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            found.push(r.u32()? as usize);
        }
        if &found != expected_shape {
            return Err(CheckpointError::ShapeMismatch { index, expected: expected_shape.clone(), found });
        }
    }
    for (_, data) in params.tensor_slices_mut() {
        for value in data.iter_mut() {
            let raw = r.take(4)?;
            *value = f32::from_le_bytes(raw.try_into().expect("4 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes { trailing: bytes.len() - r.pos });
    }
    Ok(params)
}

pub fn save(params: &NetworkParams<f32>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NetworkParams<f32>, CheckpointError> {
    decode(&std::fs::read(path)?)
}
