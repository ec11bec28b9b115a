//! Binary netpbm (PGM P5 / PPM P6) reading and writing.
//!
//! Pixels map to `[0, 1]` floats on read (`b / 255`) and back to bytes on
//! write via `round(clamp(v, 0, 1) * 255)`. Gray images become `1 x H x W`
//! tensors, RGB images `3 x H x W` with planar channel layout.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Parses a binary PGM or PPM payload into a tensor.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = take_token(bytes, &mut pos)
        .ok_or_else(|| Error::MalformedImage("missing magic".into()))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::MalformedImage(format!(
                "unsupported magic {:?}, expected P5 or P6",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = parse_int(bytes, &mut pos, "width")?;
    let height = parse_int(bytes, &mut pos, "height")?;
    let maxval = parse_int(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval { found: maxval });
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedImage(
            "missing whitespace after maxval".into(),
        ));
    }
    pos += 1;

    let (w, h) = (width as usize, height as usize);
    if w == 0 || h == 0 {
        return Err(Error::MalformedImage(format!(
            "degenerate dimensions {w}x{h}"
        )));
    }
    let expected = w * h * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::ShortImageData {
            expected,
            found: payload.len(),
        });
    }

    // Interleaved bytes to planar channels.
    let mut data = vec![0.0; expected];
    for idx in 0..w * h {
        for c in 0..channels {
            data[c * w * h + idx] = payload[idx * channels + c] as f64 / 255.0;
        }
    }
    Tensor::new_finite(vec![channels, h, w], data, "netpbm decode")
}

/// Encodes a `1 x H x W` or `3 x H x W` tensor as binary PGM/PPM bytes.
pub fn encode_netpbm(image: &Tensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || (shape[0] != 1 && shape[0] != 3) {
        return Err(Error::InvalidShape(format!(
            "netpbm encode expects 1xHxW or 3xHxW, got {shape:?}"
        )));
    }
    let (channels, h, w) = (shape[0], shape[1], shape[2]);
    let magic: &[u8] = if channels == 1 { b"P5" } else { b"P6" };
    let mut out = Vec::with_capacity(32 + channels * h * w);
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{w} {h}\n255\n").as_bytes());
    let data = image.data();
    for idx in 0..w * h {
        for c in 0..channels {
            let v = data[c * w * h + idx].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Reads a PGM/PPM file from disk.
pub fn read_netpbm(path: &Path) -> Result<Tensor> {
    decode_netpbm(&std::fs::read(path)?)
}

/// Writes a tensor to disk as PGM/PPM.
pub fn write_netpbm(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode_netpbm(image)?)?;
    Ok(())
}

/// Loads every `.pgm`/`.ppm` file in a directory, sorted by file name so the
/// corpus order is stable across platforms.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<Tensor>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .pgm/.ppm files found in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_netpbm(p)).collect()
}

/// Skips whitespace and `#` comment lines, then returns the next token.
fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_int(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let tok = take_token(bytes, pos)
        .ok_or_else(|| Error::MalformedImage(format!("missing {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::MalformedImage(format!(
                "bad {what} token {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_pixel_bytes() {
        let pixels: Vec<u8> = (0..=255).collect();
        let mut file = b"P5\n16 16\n255\n".to_vec();
        file.extend_from_slice(&pixels);
        let t = decode_netpbm(&file).unwrap();
        let out = encode_netpbm(&t).unwrap();
        let tail = &out[out.len() - 256..];
        assert_eq!(tail, &pixels[..]);
    }

    #[test]
    fn all_black_is_all_zero() {
        let mut file = b"P5\n4 2\n255\n".to_vec();
        file.extend_from_slice(&[0u8; 8]);
        let t = decode_netpbm(&file).unwrap();
        assert_eq!(t.shape(), &[1, 2, 4]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sixteen_bit_maxval_rejected() {
        let file = b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(
            decode_netpbm(&file),
            Err(Error::UnsupportedMaxval { found: 65535 })
        ));
    }

    #[test]
    fn short_payload_rejected() {
        let mut file = b"P5\n4 4\n255\n".to_vec();
        file.extend_from_slice(&[7u8; 10]);
        assert!(matches!(
            decode_netpbm(&file),
            Err(Error::ShortImageData {
                expected: 16,
                found: 10
            })
        ));
    }

    #[test]
    fn ascii_formats_rejected() {
        assert!(matches!(
            decode_netpbm(b"P2\n2 2\n255\n0 0 0 0"),
            Err(Error::MalformedImage(_))
        ));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut file = b"P5\n# made by hand\n3 1\n# another\n255\n".to_vec();
        file.extend_from_slice(&[0, 128, 255]);
        let t = decode_netpbm(&file).unwrap();
        assert_eq!(t.shape(), &[1, 1, 3]);
        assert!((t.data()[1] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn rgb_roundtrip_planar_layout() {
        let mut file = b"P6\n2 1\n255\n".to_vec();
        file.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        let t = decode_netpbm(&file).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        // Red plane first: pixels 10 and 40.
        assert!((t.data()[0] - 10.0 / 255.0).abs() < 1e-12);
        assert!((t.data()[1] - 40.0 / 255.0).abs() < 1e-12);
        let out = encode_netpbm(&t).unwrap();
        assert_eq!(&out[out.len() - 6..], &[10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn write_quantizes_by_rounding() {
        let t = Tensor::new(vec![1, 1, 3], vec![-0.5, 0.5019, 1.7]).unwrap();
        let out = encode_netpbm(&t).unwrap();
        assert_eq!(&out[out.len() - 3..], &[0, 128, 255]);
    }
}
