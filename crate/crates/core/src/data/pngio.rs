//! RGB PNG codec for LDR exposures and previews.

use std::io::{BufReader, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rounds `[0, 1]` values to `bits`-bit codes.
pub fn quantize(v: f32, bits: u32) -> u16 {
    let max = ((1u32 << bits) - 1) as f32;
    (v.clamp(0.0, 1.0) * max).round() as u16
}

fn check_rgb(img: &Tensor<f32>) -> Result<(usize, usize)> {
    if img.rank() != 3 || img.dim(0) != 3 {
        return Err(Error::Dimension(format!(
            "PNG needs a 3×H×W image, got {:?}",
            img.shape()
        )));
    }
    Ok((img.dim(1), img.dim(2)))
}

/// Encodes a `[3, H, W]` image in `[0, 1]` as 8- or 16-bit RGB.
pub fn encode_png(img: &Tensor<f32>, bits: u32) -> Result<Vec<u8>> {
    let (h, w) = check_rgb(img)?;
    let depth = match bits {
        8 => BitDepth::Eight,
        16 => BitDepth::Sixteen,
        _ => return Err(Error::Domain(format!("unsupported PNG depth {bits}"))),
    };
    let d = img.data();
    let mut raw = Vec::with_capacity(h * w * 3 * (bits as usize / 8));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let q = quantize(d[(c * h + y) * w + x], bits);
                if bits == 8 {
                    raw.push(q as u8);
                } else {
                    raw.extend_from_slice(&q.to_be_bytes());
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(depth);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Domain(format!("PNG encode: {e}")))?;
    writer
        .write_image_data(&raw)
        .map_err(|e| Error::Domain(format!("PNG encode: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::Domain(format!("PNG encode: {e}")))?;
    Ok(out)
}

/// Decodes any non-interlaced PNG to `[3, H, W]` floats in `[0, 1]`.
/// Grey is replicated and alpha dropped.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut dec = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    dec.set_transformations(Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let (scale, wide) = match info.bit_depth {
        BitDepth::Sixteen => (65535.0f32, true),
        _ => (255.0, false),
    };
    let sample = |i: usize| -> f32 {
        if wide {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f32 / scale
        } else {
            buf[i] as f32 / scale
        }
    };
    let mut data = vec![0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * channels;
            for c in 0..3 {
                let src = if channels < 3 { base } else { base + c };
                data[(c * h + y) * w + x] = sample(src);
            }
        }
    }
    Tensor::new([3, h, w], data)
}

pub fn write_png(path: &Path, img: &Tensor<f32>, bits: u32) -> Result<()> {
    std::fs::write(path, encode_png(img, bits)?).map_err(|e| Error::io(path, e))
}

pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_codes_round_trip() {
        let img = Tensor::from_fn([3, 5, 7], |i| ((i * 977) % 65536) as f32 / 65535.0);
        let back = decode_png(&encode_png(&img, 16).unwrap(), Path::new("mem")).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn eight_bit_quantizes() {
        let img = Tensor::full([3, 2, 2], 0.5f32);
        let back = decode_png(&encode_png(&img, 8).unwrap(), Path::new("mem")).unwrap();
        assert!(back.data().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(
            decode_png(b"not a png", Path::new("x.png")),
            Err(Error::Format { .. })
        ));
    }
}
