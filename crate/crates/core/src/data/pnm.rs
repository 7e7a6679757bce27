//! Binary PPM (P6) and PGM (P5) images with 8-bit samples.

use std::path::Path;

use crate::error::{io_err, shape_err, Error, Result};
use crate::tensor::Tensor;

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "PNM image",
        offset,
        detail: detail.into(),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 3×H×W tensor as P6 or a 1×H×W tensor as P5; values are clamped to `[0, 1]`.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(shape_err(
                "save_image",
                format!("{c} channels cannot be stored as PNM"),
            ))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = image.data();
    out.reserve(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            out.push(to_u8(d[ch * plane + i]));
        }
    }
    Ok(out)
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| format_err(start, format!("{what} out of range")))
    }
}

/// Decodes P5/P6 bytes to a 1×H×W or 3×H×W tensor scaled to `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 {
        return Err(format_err(0, "missing magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(format_err(0, "expected P5 or P6 magic")),
    };
    let mut p = HeaderParser { bytes, pos: 2 };
    let w = p.number("width")?;
    let h = p.number("height")?;
    let maxval_at = p.pos;
    let maxval = p.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(format_err(maxval_at, "zero image extent"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(format_err(
            maxval_at,
            format!("maxval {maxval} unsupported (8-bit only)"),
        ));
    }
    match bytes.get(p.pos) {
        Some(b' ' | b'\t' | b'\n' | b'\r') => p.pos += 1,
        _ => return Err(format_err(p.pos, "expected whitespace before payload")),
    }
    let plane = w * h;
    let need = plane * channels;
    let payload = &bytes[p.pos..];
    if payload.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let scale = maxval as f64;
    let mut data = vec![0.0; need];
    for i in 0..plane {
        for ch in 0..channels {
            data[ch * plane + i] = payload[i * channels + ch] as f64 / scale;
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

pub fn save_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let bytes = encode_pnm(image)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| io_err(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| io_err(&path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format { offset, detail, .. } => Error::Format {
            what: "PNM image",
            offset,
            detail: format!("{}: {detail}", path.as_ref().display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxval_scaling() {
        let bytes = b"P5\n2 1\n255\n\xff\x00";
        let t = decode_pnm(bytes).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0]);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P6 # made by hand\n1 1\n# another\n255\n\x10\x20\x30";
        let t = decode_pnm(bytes).unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data()[2], 0x30 as f64 / 255.0);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = b"P6\n2 2\n255\n\x01\x02\x03";
        match decode_pnm(bytes) {
            Err(Error::Format { offset, detail, .. }) => {
                assert_eq!(offset, bytes.len());
                assert!(detail.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn quantized_round_trip() {
        let data: Vec<f64> = (0..3 * 4 * 5)
            .map(|i| ((i * 41) % 256) as f64 / 255.0)
            .collect();
        let t = Tensor::new(vec![3, 4, 5], data).unwrap();
        let back = decode_pnm(&encode_pnm(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
