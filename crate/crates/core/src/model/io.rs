//! Weights file: little-endian binary.
//!
//! ```text
//! magic "PCNW" | u32 version | u32 channels, height, width | u32 layer count
//! per layer:
//!   u32 name length | name bytes (UTF-8)
//!   u8 kind (0 conv block, 1 global average pool, 2 dense)
//!   u8 flags (bit 0 trainable, bit 1 ReLU after dense)
//!   u32 stride (conv blocks; 0 otherwise)
//!   u32 weight rank | u32 dims... | f32 weight values
//!   u32 bias length | f32 bias values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::net::{Layer, LayerKind, Net};
use super::{ModelError, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PCNW";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_weights(net: &Net) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (c, h, w) = net.input_shape();
    for v in [c, h, w, net.layers.len()] {
        put_u32(&mut out, v);
    }
    for l in &net.layers {
        put_u32(&mut out, l.name.len());
        out.extend_from_slice(l.name.as_bytes());
        let (kind, stride, relu) = match l.kind {
            LayerKind::ConvBlock { stride } => (0u8, stride, false),
            LayerKind::GlobalAvgPool => (1, 0, false),
            LayerKind::Dense { relu } => (2, 0, relu),
        };
        out.push(kind);
        out.push(u8::from(l.trainable) | (u8::from(relu) << 1));
        put_u32(&mut out, stride);
        put_u32(&mut out, l.weight.shape().len());
        for &d in l.weight.shape() {
            put_u32(&mut out, d);
        }
        for v in l.weight.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, l.bias.len());
        for v in l.bias.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::BadWeights(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ModelError> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| ModelError::BadWeights("size overflow".into()))?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Net, ModelError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(ModelError::BadWeights("not a weights file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(ModelError::BadWeights(format!("unsupported version {version}")));
    }
    let input = (cur.u32()?, cur.u32()?, cur.u32()?);
    let count = cur.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let n = cur.u32()?;
        let name = String::from_utf8(cur.take(n)?.to_vec())
            .map_err(|_| ModelError::BadWeights("layer name is not UTF-8".into()))?;
        let kind = cur.u8()?;
        let flags = cur.u8()?;
        let stride = cur.u32()?;
        let kind = match kind {
            0 => LayerKind::ConvBlock { stride },
            1 => LayerKind::GlobalAvgPool,
            2 => LayerKind::Dense { relu: flags & 2 != 0 },
            k => return Err(ModelError::BadWeights(format!("layer {name}: unknown kind {k}"))),
        };
        let rank = cur.u32()?;
        let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| ModelError::BadWeights(format!("layer {name}: shape overflow")))?;
        let weight = Tensor::new(dims, cur.f32s(len)?)?;
        let blen = cur.u32()?;
        let bias = Tensor::new(vec![blen], cur.f32s(blen)?)?;
        layers.push(Layer {
            name,
            kind,
            weight,
            bias,
            trainable: flags & 1 != 0,
        });
    }
    if cur.pos != bytes.len() {
        return Err(ModelError::BadWeights(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Net::from_layers(input, layers)
}

pub fn save(net: &Net, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Net> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map_err(|e| Error::format(path, e.to_string()))
}
