//! ALNQ: frozen alignment posteriors written after the first iteration.
//!
//! ```text
//! "ALNQ" | version u32 | utterance count u64
//! per utterance: id len u16 | id utf-8 | N u32 | T u32 | N*T f32 (row-major)
//! ```
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::AlignmentPosterior;
use crate::error::{read_err, Error, Result};
use crate::io_util::{read_f32_vec, read_magic, read_string, write_string};
use crate::tensor::Matrix;

pub const ALNQ_MAGIC: &[u8; 4] = b"ALNQ";
pub const ALNQ_VERSION: u32 = 1;
const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Posteriors keyed by utterance id, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosteriorStore {
    entries: IndexMap<String, AlignmentPosterior>,
}

impl PosteriorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, q: AlignmentPosterior) {
        self.entries.insert(id.into(), q);
    }

    pub fn get(&self, id: &str) -> Option<&AlignmentPosterior> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &AlignmentPosterior)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// SHA-256 over ids and the f64 bit patterns of every entry.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (id, q) in &self.entries {
            h.update(id.as_bytes());
            h.update((q.q.rows() as u64).to_le_bytes());
            h.update((q.q.cols() as u64).to_le_bytes());
            for v in q.q.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_alnq(self, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_alnq(&mut BufReader::new(File::open(path)?))
    }
}

pub fn write_alnq<W: Write>(store: &PosteriorStore, w: &mut W) -> Result<()> {
    w.write_all(ALNQ_MAGIC)?;
    w.write_u32::<LittleEndian>(ALNQ_VERSION)?;
    w.write_u64::<LittleEndian>(store.len() as u64)?;
    for (id, post) in &store.entries {
        write_string(w, id)?;
        w.write_u32::<LittleEndian>(post.q.rows() as u32)?;
        w.write_u32::<LittleEndian>(post.q.cols() as u32)?;
        for &v in post.q.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(())
}

pub fn read_alnq<R: Read>(r: &mut R) -> Result<PosteriorStore> {
    read_magic(r, ALNQ_MAGIC)?;
    let version = r.read_u32::<LittleEndian>().map_err(read_err("version"))?;
    if version != ALNQ_VERSION {
        return Err(Error::format(format!("unsupported ALNQ version {version}")));
    }
    let count = r.read_u64::<LittleEndian>().map_err(read_err("count"))?;
    let mut store = PosteriorStore::new();
    for _ in 0..count {
        let id = read_string(r)?;
        let n = r.read_u32::<LittleEndian>().map_err(read_err("N"))? as usize;
        let t = r.read_u32::<LittleEndian>().map_err(read_err("T"))? as usize;
        let data = read_f32_vec(r, n.saturating_mul(t), "posterior values")?;
        let q = Matrix::from_vec(n, t, data.into_iter().map(f64::from).collect());
        let post = AlignmentPosterior { q, frozen: true };
        for i in 0..n {
            let s: f64 = post.row(i).iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE || post.row(i).iter().any(|v| !v.is_finite())
            {
                return Err(Error::format(format!(
                    "utterance {id}: posterior row {i} sums to {s}"
                )));
            }
        }
        if store.entries.insert(id.clone(), post).is_some() {
            return Err(Error::format(format!("duplicate utterance id {id}")));
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PosteriorStore {
        let mut s = PosteriorStore::new();
        s.insert(
            "utt-a",
            AlignmentPosterior {
                q: Matrix::from_rows(&[vec![0.25, 0.75, 0.0], vec![0.0, 0.5, 0.5]]),
                frozen: false,
            },
        );
        s.insert(
            "utt-b",
            AlignmentPosterior {
                q: Matrix::from_rows(&[vec![1.0]]),
                frozen: false,
            },
        );
        s
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let mut a = Vec::new();
        write_alnq(&sample(), &mut a).unwrap();
        let back = read_alnq(&mut a.as_slice()).unwrap();
        assert!(back.get("utt-a").unwrap().frozen);
        let mut b = Vec::new();
        write_alnq(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_rows_and_truncation() {
        let mut s = sample();
        s.insert(
            "bad",
            AlignmentPosterior {
                q: Matrix::from_rows(&[vec![0.5, 0.4]]),
                frozen: false,
            },
        );
        let mut bytes = Vec::new();
        write_alnq(&s, &mut bytes).unwrap();
        assert!(matches!(read_alnq(&mut bytes.as_slice()), Err(Error::Format(_))));

        let mut good = Vec::new();
        write_alnq(&sample(), &mut good).unwrap();
        for cut in [0, 3, 9, 20, good.len() - 1] {
            assert!(matches!(
                read_alnq(&mut &good[..cut]),
                Err(Error::Format(_))
            ));
        }
    }
}
