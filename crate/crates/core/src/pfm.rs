//! Grayscale PFM ("Pf") reading and writing.
//!
//! Layout: `Pf\n<W> <H>\n<scale>\n` followed by `W*H` 32-bit floats stored
//! bottom row first. A negative scale means little-endian payload.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{CoreError, Result};

/// Header facts recovered from a PFM file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfmInfo {
    pub little_endian: bool,
    /// Absolute value of the scale field.
    pub scale: f32,
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<(Array2<f32>, PfmInfo)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_pfm(&bytes).map_err(|e| match e {
        DecodeError::Format(reason) => CoreError::PfmFormat {
            path: path.to_path_buf(),
            reason,
        },
        DecodeError::Truncated { expected, found } => CoreError::PfmTruncated {
            path: path.to_path_buf(),
            expected,
            found,
        },
    })
}

pub fn write_pfm(data: &Array2<f32>, path: impl AsRef<Path>, little_endian: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(data, little_endian)?;
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

/// Serializes `data` to PFM bytes. Rejects non-finite values.
pub fn encode_pfm(data: &Array2<f32>, little_endian: bool) -> Result<Vec<u8>> {
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(CoreError::Validation(format!(
            "PFM payload must be finite, found {v}"
        )));
    }
    let (h, w) = data.dim();
    let scale = if little_endian { "-1.0" } else { "1.0" };
    let header = format!("Pf\n{w} {h}\n{scale}\n");
    let mut out = Vec::with_capacity(header.len() + 4 * w * h);
    out.extend_from_slice(header.as_bytes());
    for row in data.rows().into_iter().rev() {
        for &v in row {
            let b = if little_endian {
                v.to_le_bytes()
            } else {
                v.to_be_bytes()
            };
            out.extend_from_slice(&b);
        }
    }
    Ok(out)
}

#[derive(Debug)]
enum DecodeError {
    Format(String),
    Truncated { expected: usize, found: usize },
}

fn decode_pfm(bytes: &[u8]) -> std::result::Result<(Array2<f32>, PfmInfo), DecodeError> {
    if bytes.len() < 2 || &bytes[..2] != b"Pf" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(DecodeError::Format(format!(
            "expected magic \"Pf\", found {magic:?}"
        )));
    }
    let mut pos = 2;
    let mut next_token = |name: &str| -> std::result::Result<String, DecodeError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DecodeError::Format(format!("missing {name}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let width: usize = next_token("width")?
        .parse()
        .map_err(|_| DecodeError::Format("width is not an integer".into()))?;
    let height: usize = next_token("height")?
        .parse()
        .map_err(|_| DecodeError::Format("height is not an integer".into()))?;
    let scale: f32 = next_token("scale")?
        .parse()
        .map_err(|_| DecodeError::Format("scale is not a number".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(DecodeError::Format(format!("scale must be nonzero, found {scale}")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DecodeError::Format("missing newline after scale".into()));
    }
    pos += 1;

    let little_endian = scale < 0.0;
    let payload = &bytes[pos..];
    let expected = width * height * 4;
    if payload.len() != expected {
        return Err(DecodeError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let mut data = Array2::<f32>::zeros((height, width));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, col) = (i / width.max(1), i % width.max(1));
        data[[height - 1 - file_row, col]] = v;
    }
    Ok((
        data,
        PfmInfo {
            little_endian,
            scale: scale.abs(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_pixel_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pfm");
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&5.0f32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let (data, info) = read_pfm(&path).unwrap();
        assert_eq!(data, array![[5.0f32]]);
        assert!(info.little_endian);
        assert_eq!(info.scale, 1.0);
    }

    #[test]
    fn zeros_payload_is_sixteen_zero_bytes() {
        let bytes = encode_pfm(&Array2::zeros((2, 2)), true).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len() - header.len(), 16);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn scale_sign_encodes_endianness() {
        let x = array![[1.5f32, -2.0]];
        let le = encode_pfm(&x, true).unwrap();
        let be = encode_pfm(&x, false).unwrap();
        assert!(le.starts_with(b"Pf\n2 1\n-1.0\n"));
        assert!(be.starts_with(b"Pf\n2 1\n1.0\n"));
        let (a, ia) = decode_pfm(&le).unwrap();
        let (b, ib) = decode_pfm(&be).unwrap();
        assert!(ia.little_endian && !ib.little_endian);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn two_by_two_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let x = array![[0.25f32, 1.0e-30], [-7.5, 123456.78]];
        write_pfm(&x, &path, false).unwrap();
        let (y, _) = read_pfm(&path).unwrap();
        assert_eq!(
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_non_finite() {
        let x = array![[1.0f32, f32::NAN]];
        assert!(matches!(encode_pfm(&x, true), Err(CoreError::Validation(_))));
        let x = array![[f32::INFINITY]];
        assert!(matches!(encode_pfm(&x, true), Err(CoreError::Validation(_))));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_pfm(b"PF\n1 1\n-1.0\n"), Err(DecodeError::Format(_))));
        assert!(matches!(decode_pfm(b"P6\n1 1\n255\n"), Err(DecodeError::Format(_))));
        assert!(matches!(decode_pfm(b"Pf\n1 x\n-1.0\n"), Err(DecodeError::Format(_))));
        assert!(matches!(decode_pfm(b"Pf\n1 1\n0.0\n"), Err(DecodeError::Format(_))));
        assert!(matches!(decode_pfm(b"Pf\n1 1"), Err(DecodeError::Format(_))));
    }

    #[test]
    fn payload_size_mismatch_is_truncation() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0u8; 12]);
        match decode_pfm(&bytes) {
            Err(DecodeError::Truncated { expected, found }) => {
                assert_eq!((expected, found), (16, 12));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
