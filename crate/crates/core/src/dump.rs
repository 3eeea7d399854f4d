//! `CWT1` binary tensor dumps.
//!
//! Layout: the magic bytes `43 57 54 31` ("CWT1"), four little-endian `u32`
//! dimensions `(n, c, h, w)`, then `n·c·h·w` little-endian `f64` values in
//! row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const MAGIC: [u8; 4] = *b"CWT1";
const HEADER_LEN: usize = 4 + 4 * 4;

pub fn encode(t: &Tensor4) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(&MAGIC);
    for d in t.shape().dims() {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor4, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if bytes[..4] != MAGIC {
        return Err(format!("bad magic {:02x?}", &bytes[..4]));
    }
    let dim = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let shape = Shape4::new(dim(0), dim(1), dim(2), dim(3));
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * shape.numel() {
        return Err(format!(
            "payload has {} bytes, shape {shape} needs {}",
            body.len(),
            8 * shape.numel()
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor4::from_vec(shape, data).map_err(|e| e.to_string())
}

pub fn write(path: &Path, t: &Tensor4) -> Result<()> {
    let bytes = encode(t)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor4> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })
}
