//! The `SITF` embedding file format.
//!
//! ```text
//! header   magic "SITF" | version u32 (=1) | count u64 | dim u32 | flags u32
//! record   id u64 | label i32 (-1 = unlabeled) | dim × f32
//! ```
//!
//! All integers and floats are little-endian. Flag bit 0 is set when at least
//! one record carries a label. Anchor files use the same layout with one
//! record per class whose label is the class index.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SITF";
pub const VERSION: u32 = 1;
pub const FLAG_LABELS: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    /// `None` for unlabeled records (stored as -1).
    pub label: Option<u32>,
    pub values: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: u64, label: Option<u32>, values: Vec<f32>) -> Self {
        EmbeddingRecord { id, label, values }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Parsed file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingFile {
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Self {
        EmbeddingFile { dim, records }
    }
}

/// Serializes records; every record must have `dim` values.
pub fn encode(dim: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::config("dimension exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (12 + 4 * dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    let flags = if records.iter().any(|r| r.label.is_some()) { FLAG_LABELS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for r in records {
        if r.values.len() != dim {
            return Err(Error::config(format!(
                "record {} has {} values, file dimension is {dim}",
                r.id,
                r.values.len()
            )));
        }
        let label = match r.label {
            Some(l) => i32::try_from(l).map_err(|_| Error::config("label exceeds i32"))?,
            None => -1,
        };
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&label.to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingFile> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"SITF\"")));
    }
    let version_at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(version_at, format!("unsupported version {version}")));
    }
    let count = r.u64("record count")?;
    let dim = r.u32("dimension")? as usize;
    let flags_at = r.offset();
    let flags = r.u32("flags")?;
    if flags & !FLAG_LABELS != 0 {
        return Err(Error::format(flags_at, format!("unknown flag bits {flags:#x}")));
    }
    let record_len = 12 + 4 * dim as u64;
    if count.saturating_mul(record_len) > r.remaining() as u64 {
        return Err(Error::format(
            r.offset(),
            format!("truncated body: {count} records of {record_len} bytes declared, {} bytes present", r.remaining()),
        ));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = r.u64("record id")?;
        let label_at = r.offset();
        let label = match r.i32("record label")? {
            -1 => None,
            l if l >= 0 => {
                if flags & FLAG_LABELS == 0 {
                    return Err(Error::format(label_at, "labeled record in a file flagged unlabeled"));
                }
                Some(l as u32)
            }
            l => return Err(Error::format(label_at, format!("invalid label {l}"))),
        };
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(r.f32("record value")?);
        }
        records.push(EmbeddingRecord { id, label, values });
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    Ok(EmbeddingFile { dim, records })
}

pub fn write_embeddings(path: impl AsRef<Path>, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dim, records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<EmbeddingRecord> {
        vec![
            EmbeddingRecord::new(7, Some(3), vec![0.5, -1.25]),
            EmbeddingRecord::new(9, None, vec![f32::MIN_POSITIVE, 3.0e30]),
        ]
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode(2, &sample()).unwrap();
        assert_eq!(&bytes[0..4], b"SITF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        assert_eq!(&bytes[24..32], &7u64.to_le_bytes());
        assert_eq!(&bytes[32..36], &3i32.to_le_bytes());
        assert_eq!(&bytes[36..40], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[52..56], &(-1i32).to_le_bytes());
        assert_eq!(bytes.len(), 24 + 2 * (12 + 8));
    }

    #[test]
    fn round_trip_and_empty() {
        let bytes = encode(2, &sample()).unwrap();
        assert_eq!(decode(&bytes).unwrap(), EmbeddingFile::new(2, sample()));
        let empty = encode(5, &[]).unwrap();
        assert_eq!(empty.len(), HEADER_LEN);
        assert_eq!(decode(&empty).unwrap(), EmbeddingFile::new(5, vec![]));
    }

    #[test]
    fn unlabeled_only_file_clears_flag() {
        let recs = vec![EmbeddingRecord::new(1, None, vec![1.0])];
        let bytes = encode(1, &recs).unwrap();
        assert_eq!(&bytes[20..24], &0u32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap().records[0].label, None);
    }

    #[test]
    fn errors_carry_offsets() {
        let mut bytes = encode(2, &sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));

        let mut bytes = encode(2, &sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 4, .. })));

        let bytes = encode(2, &sample()).unwrap();
        assert!(matches!(decode(&bytes[..30]), Err(Error::Format { offset: 24, .. })));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Format { offset: 8, .. })));

        let mut bytes = encode(2, &sample()).unwrap();
        bytes[32..36].copy_from_slice(&(-5i32).to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 32, .. })));

        let mut bytes = encode(2, &sample()).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn dimension_mismatch_is_rejected_on_write() {
        let recs = vec![EmbeddingRecord::new(1, None, vec![1.0, 2.0, 3.0])];
        assert!(encode(2, &recs).is_err());
    }
}
