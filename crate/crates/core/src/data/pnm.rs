//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

impl Raster {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, channels: usize) -> Result<Raster> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode(&bytes, channels).map_err(|(offset, msg)| Error::Parse {
            path: path.to_path_buf(),
            offset,
            msg,
        })
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, (u64, String)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| (start as u64, format!("{what} out of range")))
    }
}

/// Decodes a raster, reporting failures as (byte offset, message).
pub fn decode(bytes: &[u8], channels: usize) -> std::result::Result<Raster, (u64, String)> {
    let magic: &[u8] = if channels == 3 { b"P6" } else { b"P5" };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err((
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space();
    let maxval_at = h.pos as u64;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err((
            maxval_at,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err((2, "zero-sized raster".into()));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => {
            return Err((
                h.pos as u64,
                "expected single whitespace after maxval".into(),
            ))
        }
    }
    let need = width * height * channels;
    let have = bytes.len() - h.pos;
    if have < need {
        return Err((
            bytes.len() as u64,
            format!("truncated pixel data: {have} of {need} bytes"),
        ));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: bytes[h.pos..h.pos + need].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Raster {
        Raster {
            width: 3,
            height: 2,
            channels: 3,
            data: (0..18).map(|i| (i * 14) as u8).collect(),
        }
    }

    #[test]
    fn round_trip() {
        let r = sample();
        assert_eq!(decode(&r.encode(), 3).unwrap(), r);
        let g = Raster {
            channels: 1,
            data: vec![0, 1, 2, 255, 254, 7],
            ..r
        };
        assert_eq!(decode(&g.encode(), 1).unwrap(), g);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P5 # c\n2 # w\n1\n255\n\x01\x02";
        assert_eq!(decode(bytes, 1).unwrap().data, [1, 2]);
    }

    #[test]
    fn truncation_and_bad_headers() {
        let enc = sample().encode();
        let (off, _) = decode(&enc[..enc.len() - 1], 3).unwrap_err();
        assert_eq!(off, enc.len() as u64 - 1);
        assert_eq!(decode(b"P3\n1 1\n255\n", 3).unwrap_err().0, 0);
        assert_eq!(decode(b"P6\n1 x\n255\n", 3).unwrap_err().0, 5);
        assert_eq!(decode(b"P6\n1 1\n65535\n", 3).unwrap_err().0, 7);
    }
}
