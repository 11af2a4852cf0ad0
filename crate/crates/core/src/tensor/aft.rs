//! "AFT1" raw tensor files: magic, u32 LE rank, rank x u32 LE extents,
//! then the f32 LE payload in row-major order.

use std::io::{Read, Write};

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const AFT1_MAGIC: &[u8; 4] = b"AFT1";

const MAX_RANK: usize = 8;

pub fn write_aft1<T: Element, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let io = |source| Error::Stream {
        context: "writing AFT1 tensor",
        source,
    };
    out.write_all(AFT1_MAGIC).map_err(io)?;
    out.write_all(&(t.rank() as u32).to_le_bytes()).map_err(io)?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

struct Cursor<'a, R> {
    inner: &'a mut R,
    offset: usize,
}

impl<R: Read> Cursor<'_, R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::Parse {
                        offset: self.offset + got,
                        message: format!("truncated {what}"),
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(Error::Stream {
                        context: "reading AFT1 tensor",
                        source,
                    })
                }
            }
        }
        self.offset += got;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Reads one tensor. `base_offset` is only used to report error positions
/// when the tensor is embedded in a larger stream.
pub fn read_aft1<T: Element, R: Read>(input: &mut R, base_offset: usize) -> Result<Tensor<T>> {
    let mut cur = Cursor {
        inner: input,
        offset: base_offset,
    };
    let mut magic = [0u8; 4];
    cur.fill(&mut magic, "magic")?;
    if &magic != AFT1_MAGIC {
        return Err(Error::Parse {
            offset: base_offset,
            message: format!("bad magic {magic:?}, expected AFT1"),
        });
    }
    let rank_at = cur.offset;
    let rank = cur.u32("rank")? as usize;
    if rank > MAX_RANK {
        return Err(Error::Parse {
            offset: rank_at,
            message: format!("rank {rank} exceeds limit {MAX_RANK}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(cur.u32("extent")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= (1 << 34))
        .ok_or_else(|| Error::Parse {
            offset: rank_at,
            message: format!("extents {shape:?} overflow"),
        })?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    let mut chunk = vec![0u8; 4 * 4096];
    let mut left = n;
    while left > 0 {
        let take = left.min(4096);
        cur.fill(&mut chunk[..take * 4], "payload")?;
        data.extend(
            chunk[..take * 4]
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)),
        );
        left -= take;
    }
    Tensor::new(shape, data)
}

/// Number of bytes `write_aft1` emits for this tensor.
#[cfg(test)]
pub(crate) fn encoded_len<T: Element>(t: &Tensor<T>) -> usize {
    8 + 4 * t.rank() + 4 * t.numel()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new([2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_aft1(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"AFT1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), encoded_len(&t));
        let back: Tensor<f32> = read_aft1(&mut buf.as_slice(), 0).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::<f32>::ones([3, 3]);
        let mut buf = Vec::new();
        write_aft1(&mut buf, &t).unwrap();
        for cut in [0, 3, 7, 13, buf.len() - 1] {
            let err = read_aft1::<f32, _>(&mut &buf[..cut], 0).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "cut {cut}: {err}");
        }
    }
}
