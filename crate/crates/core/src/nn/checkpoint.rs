//! `BHG1` parameter checkpoints.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"BHG1"
//! 4       4     u32    format version (1)
//! 8       4     u32    record count
//! then per record:
//!         4     u32    name length in bytes (L)
//!         L     utf-8  parameter name
//!         4     u32    rows
//!         4     u32    cols
//!         8·rows·cols  f64 values, row-major, IEEE-754 bit patterns
//! ```
//!
//! Nothing follows the last record.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BHG1";
pub const VERSION: u32 = 1;

/// Named tensors as stored on disk, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            records: store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, t) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
                .to_string();
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let payload = cur.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?,
            )?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            records.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last record".into()));
        }
        Ok(Checkpoint { records })
    }

    /// Copies every parameter of `store` from this checkpoint by name.
    /// Records the store does not know are ignored.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter_mut() {
            let t = self
                .get(&p.name)
                .ok_or_else(|| Error::MissingParameter(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?} in file, {:?} expected",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated payload".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_store(store).to_bytes();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            Tensor::from_rows(&[vec![1.5, -0.0], vec![f64::MIN_POSITIVE, 3.0]]).unwrap(),
        );
        s.add("b", Tensor::zeros(1, 0));
        s
    }

    #[test]
    fn byte_layout() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(1.0));
        let bytes = Checkpoint::from_store(&s).to_bytes();
        let mut expect = b"BHG1".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.push(b'w');
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let ck = Checkpoint::from_bytes(&Checkpoint::from_store(&s).to_bytes()).unwrap();
        let mut fresh = store();
        for p in fresh.iter_mut() {
            p.value.data_mut().fill(9.0);
        }
        ck.restore_into(&mut fresh).unwrap();
        assert_eq!(fresh.checksum(), s.checksum());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = Checkpoint::from_store(&store()).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(
            matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("magic"))
        );
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(m)) if m.contains("truncated")
        ));
    }

    #[test]
    fn missing_parameter_is_named() {
        let mut partial = ParamStore::new();
        partial.add("a.weight", Tensor::zeros(2, 2));
        let ck = Checkpoint::from_store(&partial);
        let mut full = store();
        match ck.restore_into(&mut full) {
            Err(Error::MissingParameter(name)) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
