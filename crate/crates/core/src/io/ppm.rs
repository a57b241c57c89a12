//! Binary P6 pixmaps with 8-bit channels.

use std::path::Path;

use gsvit_tensor::Tensor;

use crate::error::{Error, Result};

/// Decodes a P6 image into a `[3, H, W]` tensor scaled to [0, 1].
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    let bad = |m: &str| Error::Data(format!("{}: {m}", origin.display()));
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos).as_deref() != Some("P6") {
        return Err(bad("not a binary P6 pixmap"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token(&mut pos).and_then(|t| t.parse().ok()).ok_or_else(|| bad(&format!("invalid {what} in header")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval} is unsupported (only 8-bit, maxval 255)")));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero-sized image"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header"));
    }
    let data = &bytes[pos + 1..];
    let want = w * h * 3;
    if data.len() != want {
        return Err(bad(&format!("pixel data is {} bytes, expected {want}", data.len())));
    }
    let mut out = vec![0f32; want];
    for (i, px) in data.chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * w * h + i] = f32::from(v) / 255.0;
        }
    }
    Ok(Tensor::new([3, h, w], out)?)
}

/// Encodes a `[3, H, W]` tensor, clamping to [0, 1] and rounding to 8 bits.
pub fn encode(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Config(format!("pixmap needs a [3, H, W] tensor, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..h * w {
        for c in 0..3 {
            out.push((d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, img: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}
