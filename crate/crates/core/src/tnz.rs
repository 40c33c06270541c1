//! TNZ container for quantized tensor networks.
//!
//! All integers are little-endian.
//!
//! ```text
//! "TNZ1"            4 bytes magic
//! version           u8 (= 1)
//! format            u8 (0 = CP, 1 = TD, 2 = HT, 3 = TT)
//! d                 u32
//! mode sizes        d × u32
//! rank metadata     CP: u32 R, u8 weights flag
//!                   TD: d × u32
//!                   HT: u32 node count, node ranks in pre-order (root = 1)
//!                   TT: (d + 1) × u32
//! blocks            one per subtensor, canonical order:
//!                     u8 kind (0 = uniform, 1 = lloyd)
//!                     uniform: f64 min, f64 step
//!                     lloyd:   u16 level count, u32 iterations, levels × f64
//!                     u32 code count, then the codes (1 byte each)
//! crc               u32 CRC-32 (IEEE) of every preceding byte
//! ```

use thiserror::Error;

use crate::formats::{FormatError, NetworkFormat, NetworkLayout};
use crate::quantize::{Codebook, QuantizedArray, QuantizedNetwork, LEVELS};

pub const MAGIC: &[u8; 4] = b"TNZ1";
pub const VERSION: u8 = 1;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TnzError {
    #[error("corrupt TNZ file: {0}")]
    CorruptFile(String),

    #[error("unsupported TNZ version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u8),

    #[error(transparent)]
    Format(#[from] FormatError),
}

fn corrupt(msg: impl Into<String>) -> TnzError {
    TnzError::CorruptFile(msg.into())
}

fn rank_metadata_len(layout: &NetworkLayout) -> usize {
    match layout.format {
        NetworkFormat::Cp => 5,
        NetworkFormat::Tucker => 4 * layout.shape.len(),
        NetworkFormat::Ht => 4 + 4 * layout.ranks.len(),
        NetworkFormat::Tt => 4 * (layout.shape.len() + 1),
    }
}

fn block_len(b: &QuantizedArray) -> usize {
    let codebook = match &b.codebook {
        Codebook::Uniform { .. } => 16,
        Codebook::Lloyd { levels, .. } => 2 + 4 + 8 * levels.len(),
    };
    1 + codebook + 4 + b.codes.len()
}

/// Exact byte length of [`encode`]'s output.
pub fn encoded_len(q: &QuantizedNetwork) -> usize {
    4 + 1
        + 1
        + 4
        + 4 * q.layout.shape.len()
        + rank_metadata_len(&q.layout)
        + q.blocks.iter().map(block_len).sum::<usize>()
        + 4
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(q: &QuantizedNetwork) -> Vec<u8> {
    let layout = &q.layout;
    let mut out = Vec::with_capacity(encoded_len(q));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(layout.format.tag());
    put_u32(&mut out, layout.shape.len());
    for &n in &layout.shape {
        put_u32(&mut out, n);
    }
    match layout.format {
        NetworkFormat::Cp => {
            put_u32(&mut out, layout.ranks[0]);
            out.push(u8::from(layout.cp_weights));
        }
        NetworkFormat::Ht => {
            put_u32(&mut out, layout.ranks.len());
            layout.ranks.iter().for_each(|&r| put_u32(&mut out, r));
        }
        NetworkFormat::Tucker | NetworkFormat::Tt => {
            layout.ranks.iter().for_each(|&r| put_u32(&mut out, r));
        }
    }
    for b in &q.blocks {
        match &b.codebook {
            Codebook::Uniform { min, step } => {
                out.push(0);
                out.extend_from_slice(&min.to_le_bytes());
                out.extend_from_slice(&step.to_le_bytes());
            }
            Codebook::Lloyd { levels, iterations } => {
                out.push(1);
                out.extend_from_slice(&(levels.len() as u16).to_le_bytes());
                out.extend_from_slice(&iterations.to_le_bytes());
                levels
                    .iter()
                    .for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
            }
        }
        put_u32(&mut out, b.codes.len());
        out.extend_from_slice(&b.codes);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TnzError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TnzError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TnzError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<usize, TnzError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64, TnzError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn u32_vec(&mut self, n: usize) -> Result<Vec<usize>, TnzError> {
        if n > self.buf.len() / 4 {
            return Err(corrupt(format!("implausible count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<QuantizedNetwork, TnzError> {
    if bytes.len() < 4 + 1 + 1 + 4 + 4 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing TNZ1 magic"));
    }
    if bytes[4] != VERSION {
        return Err(TnzError::UnsupportedVersion(bytes[4]));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(corrupt(format!(
            "CRC mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }

    let mut r = Reader { buf: body, pos: 5 };
    let tag = r.u8()?;
    let format =
        NetworkFormat::from_tag(tag).ok_or_else(|| corrupt(format!("unknown format tag {tag}")))?;
    let d = r.u32()?;
    let shape = r.u32_vec(d)?;
    let (ranks, cp_weights) = match format {
        NetworkFormat::Cp => {
            let rank = r.u32()?;
            match r.u8()? {
                0 => (vec![rank], false),
                1 => (vec![rank], true),
                f => return Err(corrupt(format!("invalid CP weights flag {f}"))),
            }
        }
        NetworkFormat::Tucker => (r.u32_vec(d)?, false),
        NetworkFormat::Ht => {
            let n = r.u32()?;
            (r.u32_vec(n)?, false)
        }
        NetworkFormat::Tt => (r.u32_vec(d + 1)?, false),
    };
    let layout = NetworkLayout {
        format,
        shape,
        ranks,
        cp_weights,
    };
    let shapes = layout
        .subtensor_shapes()
        .map_err(|e| corrupt(e.to_string()))?;

    let mut blocks = Vec::with_capacity(shapes.len());
    for (i, s) in shapes.iter().enumerate() {
        let expected = s
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| corrupt(format!("block {i}: size overflow")))?;
        let codebook = match r.u8()? {
            0 => Codebook::Uniform {
                min: r.f64()?,
                step: r.f64()?,
            },
            1 => {
                let n = r.u16()? as usize;
                let iterations = r.u32()? as u32;
                if n == 0 || n > LEVELS {
                    return Err(corrupt(format!("block {i}: {n} codebook levels")));
                }
                let levels = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                Codebook::Lloyd { levels, iterations }
            }
            k => return Err(corrupt(format!("block {i}: unknown quantizer kind {k}"))),
        };
        let len = r.u32()?;
        if len != expected {
            return Err(corrupt(format!(
                "block {i}: {len} codes, layout needs {expected}"
            )));
        }
        let codes = r.take(len)?.to_vec();
        let limit = codebook.level_count();
        if let Some(c) = codes.iter().find(|&&c| c as usize >= limit) {
            return Err(corrupt(format!(
                "block {i}: code {c} exceeds {limit} levels"
            )));
        }
        blocks.push(QuantizedArray { codes, codebook });
    }
    if r.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(QuantizedNetwork { layout, blocks })
}
