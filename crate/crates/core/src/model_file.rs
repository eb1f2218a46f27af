//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MCD1"  u32 version (=1)
//! u32 len + UTF-8 descriptor      (canonical form)
//! u32 len + UTF-8 preprocessor tag
//! u64 seed
//! per non-input layer: u8 kind (1 conv, 2 max-pool, 3 fully), u64 count, count f64
//! ```
//!
//! Conv parameters are `[out][in][row][col]` then `[out]` biases; fully
//! connected parameters are `[out][in]` then `[out]` biases. Pooling blocks
//! carry a zero count. Trailing bytes are rejected.

use std::path::Path;

use crate::descriptor::{DescriptorError, NetDescriptor};
use crate::ensemble::Column;
use crate::network::{Layer, Network};
use crate::preprocess::{PreprocessError, Preprocessor};

pub const MAGIC: &[u8; 4] = b"MCD1";
pub const VERSION: u32 = 1;

const KIND_CONV: u8 = 1;
const KIND_POOL: u8 = 2;
const KIND_FULLY: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("string at byte {offset} is not valid UTF-8")]
    Utf8 { offset: usize },
    #[error("descriptor: {0}")]
    Descriptor(#[from] DescriptorError),
    #[error("preprocessor: {0}")]
    Preprocessor(#[from] PreprocessError),
    #[error("layer {layer}: kind byte {found}, expected {expected}")]
    LayerKind {
        layer: usize,
        expected: u8,
        found: u8,
    },
    #[error("layer {layer}: {found} parameters, expected {expected}")]
    ParamCount {
        layer: usize,
        expected: u64,
        found: u64,
    },
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(column: &Column) -> Vec<u8> {
    let net = &column.network;
    let mut out = Vec::with_capacity(64 + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &net.descriptor().to_string());
    put_str(&mut out, &column.preprocessor.to_string());
    out.extend_from_slice(&column.seed.to_le_bytes());
    for layer in net.layers() {
        let kind = match layer {
            Layer::Conv(_) => KIND_CONV,
            Layer::Pool(_) => KIND_POOL,
            Layer::Fully(_) => KIND_FULLY,
        };
        out.push(kind);
        out.extend_from_slice(&(layer.param_count() as u64).to_le_bytes());
        if let Some((w, b)) = layer.params() {
            for v in w.data().iter().chain(b.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ModelFileError::Truncated {
                offset: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, ModelFileError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<&'a str, ModelFileError> {
        let len = self.u32()? as usize;
        let offset = self.pos;
        std::str::from_utf8(self.take(len)?).map_err(|_| ModelFileError::Utf8 { offset })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Column, ModelFileError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| ModelFileError::BadMagic)? != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelFileError::Version(version));
    }
    let descriptor = NetDescriptor::parse(r.string()?)?;
    let preprocessor: Preprocessor = r.string()?.parse()?;
    let seed = r.u64()?;
    let mut network = Network::new(descriptor);
    let mut params = Vec::with_capacity(network.param_count());
    for (i, layer) in network.layers().iter().enumerate() {
        let expected_kind = match layer {
            Layer::Conv(_) => KIND_CONV,
            Layer::Pool(_) => KIND_POOL,
            Layer::Fully(_) => KIND_FULLY,
        };
        let kind = r.u8()?;
        if kind != expected_kind {
            return Err(ModelFileError::LayerKind {
                layer: i + 1,
                expected: expected_kind,
                found: kind,
            });
        }
        let count = r.u64()?;
        let expected = layer.param_count() as u64;
        if count != expected {
            return Err(ModelFileError::ParamCount {
                layer: i + 1,
                expected,
                found: count,
            });
        }
        let raw = r.take(8 * count as usize)?;
        params.extend(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        );
    }
    if r.pos != bytes.len() {
        return Err(ModelFileError::TrailingBytes(bytes.len() - r.pos));
    }
    network
        .set_params(&params)
        .expect("per-layer counts were checked");
    Ok(Column::new(network, preprocessor, seed))
}

pub fn save(column: &Column, path: &Path) -> Result<(), ModelFileError> {
    std::fs::write(path, encode(column)).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Column, ModelFileError> {
    let bytes = std::fs::read(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
