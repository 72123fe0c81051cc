//! HOT4 binary tensor format.
//!
//! ```text
//! b"HOT4" | n: u32 LE | c: u32 LE | h: u32 LE | w: u32 LE | n·c·h·w × f64 LE
//! ```
//!
//! Values are row-major with `n` outermost and `w` innermost. Several records
//! may be concatenated in one stream.

use std::io::{ErrorKind, Read, Write};

use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::shape::Shape4;

pub const MAGIC: &[u8; 4] = b"HOT4";
const HEADER_LEN: u64 = 4 + 4 * 4;

pub fn write_tensor<W: Write>(mut out: W, a: &Array4) -> Result<()> {
    out.write_all(MAGIC)?;
    for d in a.shape().dims() {
        let d = u32::try_from(d).map_err(|_| {
            TensorError::invalid("write_tensor", format!("dimension {d} exceeds u32"))
        })?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(a.data().len() * 8);
    for v in a.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn encode(a: &Array4) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + a.data().len() * 8);
    write_tensor(&mut buf, a).expect("writing to a Vec cannot fail");
    buf
}

/// Tracks the absolute stream position so errors can report byte offsets.
struct Cursor<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Cursor<R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(TensorError::Format {
                        offset: self.pos + read as u64,
                        msg: format!("unexpected end of data while reading {what}"),
                    })
                }
                Ok(k) => read += k,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.pos += read as u64;
        Ok(())
    }
}

/// Reads one record starting at stream offset `base` (used only for error messages).
pub fn read_tensor_at<R: Read>(input: R, base: u64) -> Result<Array4> {
    let mut cur = Cursor {
        inner: input,
        pos: base,
    };
    let mut magic = [0u8; 4];
    cur.fill(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(TensorError::Format {
            offset: base,
            msg: format!("bad magic {magic:?}, expected \"HOT4\""),
        });
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 4];
        cur.fill(&mut b, "dimensions")?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let shape = Shape4::from(dims);
    let count = shape.numel();
    let mut bytes = vec![0u8; count * 8];
    cur.fill(&mut bytes, "values")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array4::from_vec(shape, data)
}

pub fn read_tensor<R: Read>(input: R) -> Result<Array4> {
    read_tensor_at(input, 0)
}

/// Size in bytes of the record for a tensor of this shape.
pub fn encoded_len(shape: Shape4) -> u64 {
    HEADER_LEN + shape.numel() as u64 * 8
}
