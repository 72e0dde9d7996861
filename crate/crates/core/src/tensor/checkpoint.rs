//! Binary parameter checkpoints.
//!
//! Layout (all integers `u32`, all floats `f64`, little-endian):
//!
//! ```text
//! magic "NEFTGNCK" | version | hash_len | hash bytes | count
//! count × ( name_len | name bytes | rows | cols | rows*cols floats )
//! ```

use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NEFTGNCK";

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(store: &ParamStore, config_hash: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(64 + store.num_values() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut buf, config_hash.len())?;
    buf.extend_from_slice(config_hash.as_bytes());
    put_u32(&mut buf, store.len())?;
    for p in store.iter() {
        put_u32(&mut buf, p.name.len())?;
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, p.value.rows())?;
        put_u32(&mut buf, p.value.cols())?;
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not utf-8".into()))
    }
}

/// Decodes a checkpoint into its config hash and named tensors.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hash = r.string()?;
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::new(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((hash, out))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, config_hash: &str) -> Result<()> {
    fs::write(path, encode_checkpoint(store, config_hash)?)?;
    Ok(())
}

/// Loads values into `store`, refusing checkpoints written for another
/// configuration.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore, expected_hash: &str) -> Result<()> {
    let (hash, values) = decode_checkpoint(&fs::read(path)?)?;
    if hash != expected_hash {
        return Err(Error::Checkpoint(format!("config hash {hash} does not match {expected_hash}")));
    }
    store.load_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_bit_exactly() {
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::new(2, 2, vec![0.1, -3.5, f64::MIN_POSITIVE, 1e300]).unwrap()).unwrap();
        store.add("b", Tensor::row(vec![std::f64::consts::PI])).unwrap();
        let bytes = encode_checkpoint(&store, "abc123").unwrap();
        let (hash, values) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(values[0].1, store.get(store.find("a.weight").unwrap()).value);
        assert_eq!(values[1].1.data(), &[std::f64::consts::PI]);
    }

    #[test]
    fn header_is_little_endian() {
        let store = ParamStore::new();
        let bytes = encode_checkpoint(&store, "").unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
    }

    #[test]
    fn truncated_and_mismatched_files_fail() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![1.0, 2.0])).unwrap();
        let bytes = encode_checkpoint(&store, "h").unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &store, "h").unwrap();
        assert!(load_checkpoint(&path, &mut store, "other").is_err());
        let mut other = ParamStore::new();
        other.add("w", Tensor::row(vec![0.0; 3])).unwrap();
        assert!(load_checkpoint(&path, &mut other, "h").is_err());
    }
}
