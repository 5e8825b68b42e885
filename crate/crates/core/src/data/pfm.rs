//! Portable float map, 3 channels.
//!
//! Written as `PF\n<w> <h>\n-1.0\n` followed by little-endian `f32` RGB
//! triples, bottom row first. Both byte orders are accepted on read.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes a `[3, H, W]` tensor.
pub fn encode_pfm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    if img.rank() != 3 || img.dim(0) != 3 {
        return Err(Error::Dimension(format!(
            "PFM needs a 3×H×W image, got {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.dim(1), img.dim(2));
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 12);
    let d = img.data();
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..3 {
                out.extend_from_slice(&d[(c * h + y) * w + x].to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// `path` is only used in error messages.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |m: &str| Error::format(path, m.to_string());
    // Three whitespace-terminated header tokens; the last is followed by
    // exactly one whitespace byte.
    let mut tokens = Vec::with_capacity(4);
    let mut at = 0;
    while tokens.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at || at >= bytes.len() {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| bad("header is not ASCII"))?);
        if start == 0 && tokens[0] != "PF" {
            return Err(if tokens[0] == "Pf" {
                bad("single-channel PFM is not supported")
            } else {
                bad("bad magic, expected PF")
            });
        }
    }
    at += 1;
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimensions"));
    let (w, h) = (dim(tokens[1])?, dim(tokens[2])?);
    let scale: f32 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    let little = scale < 0.0;
    let n = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(12))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let payload = &bytes[at..];
    if payload.len() < n {
        return Err(bad("truncated payload"));
    }
    if payload.len() > n {
        return Err(bad("trailing bytes after payload"));
    }
    let mut data = vec![0f32; 3 * h * w];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (pix, c) = (i / 3, i % 3);
        let (row, x) = (pix / w, pix % w);
        data[(c * h + (h - 1 - row)) * w + x] = v;
    }
    Tensor::new([3, h, w], data)
}

pub fn write_pfm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_pfm(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}
