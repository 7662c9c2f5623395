//! Portable float map, single channel ("Pf").
//!
//! Header: `Pf\n<width> <height>\n<scale>\n`, where a negative scale marks a
//! little-endian payload. Rows are stored bottom to top.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes a `[1, 1, H, W]` or `[H, W]` map, little-endian.
pub fn encode_pfm(map: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(map)?;
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for row in map.data().chunks(w).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes to `[1, 1, H, W]`.
pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let mut token = || -> Result<&str> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PFM", "header ends early"));
        }
        std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("PFM", "header is not ASCII"))
    };
    match token()? {
        "Pf" => {}
        "PF" => return Err(Error::format("PFM", "three-channel PF files are not supported")),
        other => return Err(Error::format("PFM", format!("bad magic {other:?}"))),
    }
    let dim = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format("PFM", format!("bad {what} {s:?}")))
    };
    let w = dim(token()?, "width")?;
    let h = dim(token()?, "height")?;
    let scale_text = token()?;
    let scale: f64 = scale_text
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format("PFM", format!("bad scale {scale_text:?}")))?;
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("PFM", "dimensions overflow"))?;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < need {
        return Err(Error::format(
            "PFM",
            format!("payload has {} bytes, {w}x{h} needs {need}", payload.len()),
        ));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; h * w];
    for (r, row) in payload[..need].chunks_exact(w * 4).enumerate() {
        let dst = &mut data[(h - 1 - r) * w..(h - r) * w];
        for (d, b) in dst.iter_mut().zip(row.chunks_exact(4)) {
            let b = [b[0], b[1], b[2], b[3]];
            *d = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Tensor::from_vec(&[1, 1, h, w], data)
}

pub fn save_pfm(path: impl AsRef<Path>, map: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(map)?).map_err(|e| Error::io(path, e))
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_pfm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub(crate) fn plane_dims<T: crate::tensor::Real>(map: &Tensor<T>) -> Result<(usize, usize)> {
    match *map.shape() {
        [h, w] | [1, 1, h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::shape("disparity map", format!("expected [1, 1, H, W], got {:?}", map.shape()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn big_endian_payload() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend(2.0f32.to_be_bytes());
        bytes.extend(7.5f32.to_be_bytes());
        let t = decode_pfm(&bytes).unwrap();
        // Bottom-up: the first stored row is the last image row.
        assert_eq!(t.data(), &[7.5, 2.0]);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_pfm(b"P5\n1 1\n-1\n\0\0\0\0").is_err());
        assert!(decode_pfm(b"PF\n1 1\n-1\n").is_err());
        assert!(decode_pfm(b"Pf\n0 1\n-1\n").is_err());
        assert!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
        let err = decode_pfm(b"Pf\n2 2\n-1\n\0\0\0\0").unwrap_err().to_string();
        assert!(err.contains("needs 16"), "{err}");
    }
}
