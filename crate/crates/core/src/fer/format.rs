//! FERW v1, little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "FERW"
//! version      u32      1
//! layer_count  u32
//! per layer:
//!   kind         u8     0 conv, 1 depthwise, 2 pointwise, 3 batch norm,
//!                       4 relu, 5 global avg pool, 6 softmax,
//!                       7 residual add, 8 max pool
//!   kernel       u32    D (batch norm: f32 bits of epsilon)
//!   stride       u32
//!   padding      u32    0 same, 1 valid
//!   in_channels  u32    M
//!   out_channels u32    N
//!   flags        u32    bit 0 has bias, bit 1 save input, bit 2 on skip
//!   payload_len  u64    bytes
//!   payload      f32 x payload_len/4
//! checksum     u64      sum of all payload bytes mod 2^64
//! ```
//!
//! Payload order: conv `N*M*D*D` weights (`[out][in][ky][kx]`) then `N`
//! biases if flagged; depthwise `M*D*D`; pointwise `N*M`; batch norm gamma,
//! beta, mean, var, each `C` long.

use crate::fer::model::{Layer, LayerHeader, Model};
use crate::fer::FerError;

pub const MAGIC: &[u8; 4] = b"FERW";
pub const VERSION: u32 = 1;

/// Serialises any layer list, checked or not.
pub fn encode_layers(layers: &[Layer]) -> Vec<u8> {
    let payload_bytes: usize = layers.iter().map(|l| l.params.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + layers.len() * 33 + payload_bytes + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    let mut checksum = 0u64;
    for layer in layers {
        let h = &layer.header;
        out.push(h.kind);
        for v in [h.kernel, h.stride, h.padding, h.in_channels, h.out_channels, h.flags] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&((layer.params.len() * 4) as u64).to_le_bytes());
        for p in &layer.params {
            for b in p.to_le_bytes() {
                checksum = checksum.wrapping_add(u64::from(b));
                out.push(b);
            }
        }
    }
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn save_model(model: &Model) -> Vec<u8> {
    encode_layers(model.layers())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, layer: Option<usize>) -> Result<&'a [u8], FerError> {
        if self.bytes.len() - self.pos < n {
            return Err(FerError::TruncatedFile { layer });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, layer: Option<usize>) -> Result<u32, FerError> {
        Ok(u32::from_le_bytes(self.take(4, layer)?.try_into().unwrap()))
    }

    fn u64(&mut self, layer: Option<usize>) -> Result<u64, FerError> {
        Ok(u64::from_le_bytes(self.take(8, layer)?.try_into().unwrap()))
    }
}

/// Parses and shape-checks a FERW file.
///
/// All layers are read before the checksum is verified, and the checksum is
/// verified before any shape checking.
pub fn load_model(bytes: &[u8]) -> Result<Model, FerError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, None).map_err(|_| FerError::BadMagic)?;
    if magic != MAGIC {
        return Err(FerError::BadMagic);
    }
    let version = r.u32(None)?;
    if version != VERSION {
        return Err(FerError::UnsupportedVersion(version));
    }
    let count = r.u32(None)? as usize;

    let mut raw: Vec<(LayerHeader, &[u8])> = Vec::with_capacity(count.min(1024));
    let mut computed = 0u64;
    for i in 0..count {
        let at = Some(i);
        let kind = r.take(1, at)?[0];
        let mut fields = [0u32; 6];
        for f in &mut fields {
            *f = r.u32(at)?;
        }
        let len = r.u64(at)?;
        let len = usize::try_from(len).map_err(|_| FerError::TruncatedFile { layer: at })?;
        let payload = r.take(len, at)?;
        computed = payload.iter().fold(computed, |acc, &b| acc.wrapping_add(u64::from(b)));
        let [kernel, stride, padding, in_channels, out_channels, flags] = fields;
        raw.push((
            LayerHeader {
                kind,
                kernel,
                stride,
                padding,
                in_channels,
                out_channels,
                flags,
            },
            payload,
        ));
    }
    let stored = r.u64(None)?;
    if stored != computed {
        return Err(FerError::ChecksumMismatch { stored, computed });
    }
    if r.pos != bytes.len() {
        return Err(FerError::TrailingBytes(bytes.len() - r.pos));
    }

    let mut layers = Vec::with_capacity(raw.len());
    for (i, (header, payload)) in raw.into_iter().enumerate() {
        if payload.len() % 4 != 0 {
            return Err(FerError::ShapeCheckFailed {
                layer: i,
                reason: format!("payload of {} bytes is not a whole number of f32s", payload.len()),
            });
        }
        let params = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        layers.push(Layer { header, params });
    }
    Model::new(layers)
}
