//! `RVF1` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RVF1"
//! repeated { u32 name_len, name (UTF-8), u32 rank, rank × u32 dims, numel × f32 }
//! u32 CRC32 over every byte between the magic and the checksum
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RVF1";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated checkpoint record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing RVF1 magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let payload = &body[MAGIC.len()..];
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(Error::Format("checkpoint CRC mismatch".into()));
    }
    let mut rd = Reader { buf: payload, pos: 0 };
    let mut records = Vec::new();
    while rd.pos < payload.len() {
        let name_len = rd.u32()? as usize;
        let name = std::str::from_utf8(rd.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = rd.u32()? as usize;
        let shape = (0..rank).map(|_| rd.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = rd.take(numel * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, values });
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, encode(records))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<Record> {
        vec![
            Record {
                name: "enc.conv0.weight".into(),
                shape: vec![2, 1, 3, 3],
                values: (0..18).map(|i| i as f32 * 0.5 - 3.0).collect(),
            },
            Record {
                name: "μ".into(),
                shape: vec![1],
                values: vec![f32::MIN_POSITIVE],
            },
        ]
    }

    #[test]
    fn layout_is_magic_records_crc() {
        let bytes = encode(&sample()[1..]);
        assert_eq!(&bytes[..4], b"RVF1");
        // name_len(4) + "μ"(2) + rank(4) + dim(4) + value(4) + crc(4)
        assert_eq!(bytes.len(), 4 + 4 + 2 + 4 + 4 + 4 + 4);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupted_payload_fails_crc() {
        let mut bytes = encode(&sample());
        bytes[10] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        assert!(decode(b"RVF0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<u32>(), 1..64)) {
            let values: Vec<f32> = values.into_iter().map(f32::from_bits).collect();
            let recs = vec![Record { name: "w".into(), shape: vec![values.len()], values }];
            let bytes = encode(&recs);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
            for (a, b) in back[0].values.iter().zip(&recs[0].values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
