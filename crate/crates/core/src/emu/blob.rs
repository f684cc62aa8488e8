//! Binary dump of a [`Sparse24Matrix`]. All integers little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SP24"
//! 4       4     u32 rows
//! 8       4     u32 logical columns (multiple of 4)
//! 12      1     value tag: 0 = f64, 1 = f16 (IEEE binary16 bits)
//! 13      3     reserved, zero
//! 16      V     values, rows * cols / 2 entries, row-major, two per group
//!               (8 bytes each for tag 0, 2 bytes each for tag 1)
//! 16+V    G     metadata, one 4-bit code per (row, group) in row-major
//!               order: pos0 in bits 0-1, pos1 in bits 2-3; two codes per
//!               byte, first code in the low nibble; an odd count leaves
//!               the last high nibble zero
//! ```

use half::f16;

use super::Sparse24Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SP24";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueEncoding {
    F64 = 0,
    F16 = 1,
}

pub fn encode(m: &Sparse24Matrix, enc: ValueEncoding) -> Vec<u8> {
    let groups = m.metadata().len();
    let value_bytes = match enc {
        ValueEncoding::F64 => 8,
        ValueEncoding::F16 => 2,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + m.values().len() * value_bytes + groups.div_ceil(2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.push(enc as u8);
    out.extend_from_slice(&[0; 3]);
    for v in m.values() {
        match enc {
            ValueEncoding::F64 => out.extend_from_slice(&v.to_le_bytes()),
            ValueEncoding::F16 => out.extend_from_slice(&f16::from_f64(*v).to_bits().to_le_bytes()),
        }
    }
    for pair in m.metadata().chunks(2) {
        let code = |p: &[u8; 2]| p[0] | (p[1] << 2);
        let lo = code(&pair[0]);
        let hi = pair.get(1).map_or(0, code);
        out.push(lo | (hi << 4));
    }
    out
}

fn blob_err(msg: impl Into<String>) -> Error {
    Error::Blob(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Sparse24Matrix> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(blob_err("missing SP24 header"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let enc = match bytes[12] {
        0 => ValueEncoding::F64,
        1 => ValueEncoding::F16,
        t => return Err(blob_err(format!("unknown value tag {t}"))),
    };
    if bytes[13..16] != [0; 3] {
        return Err(blob_err("reserved header bytes are not zero"));
    }
    if cols % 4 != 0 {
        return Err(blob_err(format!("{cols} columns is not a multiple of 4")));
    }
    let n_values = rows * cols / 2;
    let n_groups = rows * cols / 4;
    let width = if enc == ValueEncoding::F64 { 8 } else { 2 };
    let expected = HEADER_LEN + n_values * width + n_groups.div_ceil(2);
    if bytes.len() != expected {
        return Err(blob_err(format!("{} bytes, expected {expected}", bytes.len())));
    }
    let body = &bytes[HEADER_LEN..];
    let values = body[..n_values * width]
        .chunks_exact(width)
        .map(|c| match enc {
            ValueEncoding::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            ValueEncoding::F16 => f16::from_bits(u16::from_le_bytes(c.try_into().unwrap())).to_f64(),
        })
        .collect();
    let packed = &body[n_values * width..];
    let meta = (0..n_groups)
        .map(|i| {
            let code = (packed[i / 2] >> (4 * (i % 2))) & 0xF;
            [code & 0x3, code >> 2]
        })
        .collect();
    Sparse24Matrix::from_parts(rows, cols, values, meta)
}
