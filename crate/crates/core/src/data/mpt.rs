//! The MPT1 on-disk tensor format.
//!
//! Layout, all little-endian: magic `MPT1`, u32 ndim, ndim × u32 dims,
//! row-major IEEE-754 f32 payload. Round-trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::TensorData;

pub const MPT1_MAGIC: [u8; 4] = *b"MPT1";

/// Byte length of the encoding of a tensor with the given shape.
pub fn encoded_len(shape: &[usize]) -> usize {
    4 + 4 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

/// Appends the MPT1 encoding to a buffer.
pub fn encode_tensor(tensor: &TensorData<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(&MPT1_MAGIC);
    out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential parser with absolute byte offsets for error reporting.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.offset(),
                reason: format!(
                    "truncated: {what} needs {n} bytes, only {} remain",
                    self.remaining()
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64_le(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn u128_le(&mut self, what: &str) -> Result<u128> {
        let b = self.take(16, what)?;
        Ok(u128::from_le_bytes(b.try_into().expect("16 bytes")))
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format {
                offset: self.offset(),
                reason: format!("{} unexpected trailing bytes", self.remaining()),
            });
        }
        Ok(())
    }
}

/// Decodes one tensor block at the reader's position.
pub fn decode_tensor(r: &mut ByteReader<'_>) -> Result<TensorData<f32>> {
    let magic_at = r.offset();
    let magic = r.take(4, "magic")?;
    if magic != MPT1_MAGIC {
        return Err(Error::Format {
            offset: magic_at,
            reason: format!("bad magic {magic:02x?}, expected 'MPT1'"),
        });
    }
    let ndim = r.u32_le("ndim")? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format {
            offset: r.offset() - 4,
            reason: format!("implausible ndim {ndim}"),
        });
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let d = r.u32_le(&format!("dim {i}"))? as usize;
        if d == 0 {
            return Err(Error::Format {
                offset: r.offset() - 4,
                reason: format!("dimension {i} is zero"),
            });
        }
        shape.push(d);
    }
    let numel: usize = shape.iter().product();
    let payload_at = r.offset();
    let need = 4 * numel;
    if r.remaining() < need {
        return Err(Error::Format {
            offset: payload_at,
            reason: format!(
                "truncated payload: shape {shape:?} expects {need} bytes, got {}",
                r.remaining()
            ),
        });
    }
    let bytes = r.take(need, "payload")?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TensorData::new(shape, data)
}

/// Writes one tensor as an MPT1 file.
pub fn write_tensor(path: impl AsRef<Path>, tensor: &TensorData<f32>) -> Result<()> {
    let path = path.as_ref();
    if !tensor.all_finite() {
        return Err(Error::Data(format!(
            "refusing to write non-finite tensor to {}",
            path.display()
        )));
    }
    let mut buf = Vec::with_capacity(encoded_len(tensor.shape()));
    encode_tensor(tensor, &mut buf);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an MPT1 file written by [`write_tensor`].
pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorData<f32>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&buf);
    let tensor = decode_tensor(&mut r)?;
    r.expect_end()?;
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let dir = std::env::temp_dir().join("mpt_unit");
        std::fs::create_dir_all(&dir).unwrap();
        let t: TensorData<f32> = TensorData::randn(vec![3, 5, 7], &mut rng);
        let path = dir.join("t.mpt");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(t.shape(), back.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_size_arithmetic() {
        assert_eq!(encoded_len(&[16, 600, 600]), 23_040_020);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut buf = Vec::new();
        encode_tensor(&TensorData::new(vec![2], vec![1.0, 2.0]).unwrap(), &mut buf);
        buf[0] = b'X';
        let err = decode_tensor(&mut ByteReader::new(&buf)).unwrap_err();
        match err {
            Error::Format { offset, reason } => {
                assert_eq!(offset, 0);
                assert!(reason.contains("bad magic"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_names_expected_and_actual() {
        let mut buf = Vec::new();
        encode_tensor(
            &TensorData::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            &mut buf,
        );
        buf.truncate(buf.len() - 6);
        let err = decode_tensor(&mut ByteReader::new(&buf)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expects 16 bytes") && msg.contains("got 10"), "{msg}");
    }
}
