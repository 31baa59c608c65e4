//! TREP teacher-representation files.
//!
//! ```text
//! "TREP" | version u32 = 1 | teacher id (u16 len + utf-8)
//!        | L u32 | D u32 | variants u32 | utterances u64
//! per utterance: id (u16 len + utf-8) | N u32
//!        | f32 blocks N×D for variant 0 layer 1..L, variant 1 layer 1..L, ...
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;

use crate::error::{read_err, Error, Result};
use crate::io_util::{read_f32_vec, read_magic, read_string, write_f32_slice, write_string};
use crate::tensor::Matrix;

pub const TREP_MAGIC: &[u8; 4] = b"TREP";
pub const TREP_VERSION: u32 = 1;

/// All layers and variants of one teacher for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceReps {
    tokens: usize,
    data: Vec<f32>,
}

impl UtteranceReps {
    pub fn tokens(&self) -> usize {
        self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRepSet {
    pub teacher: String,
    pub layers: u32,
    pub dim: u32,
    pub variants: u32,
    utterances: IndexMap<String, UtteranceReps>,
}

impl TeacherRepSet {
    pub fn new(teacher: impl Into<String>, layers: u32, dim: u32, variants: u32) -> Result<Self> {
        if layers == 0 || dim == 0 || variants == 0 {
            return Err(Error::config(format!(
                "teacher dims must be positive (L={layers}, D={dim}, variants={variants})"
            )));
        }
        Ok(Self {
            teacher: teacher.into(),
            layers,
            dim,
            variants,
            utterances: IndexMap::new(),
        })
    }

    fn block(&self, tokens: usize) -> usize {
        tokens * self.dim as usize
    }

    /// `data` is variant-major, then layer-major `tokens × dim` blocks.
    pub fn insert(&mut self, id: impl Into<String>, tokens: usize, data: Vec<f32>) -> Result<()> {
        let id = id.into();
        let want = self.block(tokens) * (self.layers * self.variants) as usize;
        if data.len() != want {
            return Err(Error::contract(format!(
                "utterance {id}: {} values, expected {want}",
                data.len()
            )));
        }
        if self.utterances.contains_key(&id) {
            return Err(Error::contract(format!("utterance {id} inserted twice")));
        }
        self.utterances.insert(id, UtteranceReps { tokens, data });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceReps> {
        self.utterances.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &UtteranceReps)> {
        self.utterances.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Row-major `N × D` slice for `(utterance, variant, layer)`; layers are
    /// 1-based.
    pub fn slice(&self, id: &str, variant: u32, layer: u32) -> Result<&[f32]> {
        let missing = || {
            Error::Missing(format!(
                "teacher {} has no matrix for (utterance {id}, variant {variant}, layer {layer})",
                self.teacher
            ))
        };
        let reps = self.utterances.get(id).ok_or_else(missing)?;
        if variant >= self.variants || layer == 0 || layer > self.layers {
            return Err(missing());
        }
        let block = self.block(reps.tokens);
        let start = (variant * self.layers + (layer - 1)) as usize * block;
        Ok(&reps.data[start..start + block])
    }

    pub fn matrix(&self, id: &str, variant: u32, layer: u32) -> Result<Matrix<f32>> {
        let data = self.slice(id, variant, layer)?.to_vec();
        Ok(Matrix::from_vec(data.len() / self.dim as usize, self.dim as usize, data))
    }

    /// Every listed utterance must be present with the given token count.
    pub fn check_tokens<'a>(&self, expected: impl IntoIterator<Item = (&'a str, usize)>) -> Result<()> {
        for (id, n) in expected {
            match self.utterances.get(id) {
                None => {
                    return Err(Error::Missing(format!(
                        "teacher {} has no representations for utterance {id}",
                        self.teacher
                    )))
                }
                Some(r) if r.tokens != n => {
                    return Err(Error::Consistency(format!(
                        "utterance {id}: teacher {} has {} token rows, transcript has {n}",
                        self.teacher, r.tokens
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TREP_MAGIC)?;
        w.write_u32::<LittleEndian>(TREP_VERSION)?;
        write_string(w, &self.teacher)?;
        w.write_u32::<LittleEndian>(self.layers)?;
        w.write_u32::<LittleEndian>(self.dim)?;
        w.write_u32::<LittleEndian>(self.variants)?;
        w.write_u64::<LittleEndian>(self.utterances.len() as u64)?;
        for (id, reps) in &self.utterances {
            write_string(w, id)?;
            w.write_u32::<LittleEndian>(reps.tokens as u32)?;
            write_f32_slice(w, &reps.data)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let header = TrepHeader::read(r)?;
        let mut set = Self::new(header.teacher, header.layers, header.dim, header.variants)
            .map_err(|e| Error::format(e.to_string()))?;
        for _ in 0..header.utterances {
            let id = read_string(r)?;
            let n = r.read_u32::<LittleEndian>().map_err(read_err("token count"))? as usize;
            let count = (n as u64)
                .checked_mul(set.dim as u64 * set.layers as u64 * set.variants as u64)
                .filter(|&c| c <= usize::MAX as u64)
                .ok_or_else(|| Error::format(format!("utterance {id}: block size overflows")))?;
            let data = read_f32_vec(r, count as usize, &id)?;
            if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(format!(
                    "utterance {id}: non-finite value at offset {bad}"
                )));
            }
            set.insert(id, n, data).map_err(|e| Error::format(e.to_string()))?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

/// Fixed-size header fields of a TREP file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrepHeader {
    pub version: u32,
    pub teacher: String,
    pub layers: u32,
    pub dim: u32,
    pub variants: u32,
    pub utterances: u64,
}

impl TrepHeader {
    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, TREP_MAGIC)?;
        let version = r.read_u32::<LittleEndian>().map_err(read_err("version"))?;
        if version != TREP_VERSION {
            return Err(Error::format(format!("unsupported TREP version {version}")));
        }
        Ok(Self {
            version,
            teacher: read_string(r)?,
            layers: r.read_u32::<LittleEndian>().map_err(read_err("layer count"))?,
            dim: r.read_u32::<LittleEndian>().map_err(read_err("hidden dim"))?,
            variants: r.read_u32::<LittleEndian>().map_err(read_err("variant count"))?,
            utterances: r.read_u64::<LittleEndian>().map_err(read_err("utterance count"))?,
        })
    }
}

pub fn read_teacher_reps(path: impl AsRef<Path>) -> Result<TeacherRepSet> {
    let path = path.as_ref();
    TeacherRepSet::load(path).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::Missing(format!("teacher representations not found: {}", path.display()))
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TeacherRepSet {
        let mut s = TeacherRepSet::new("toy", 2, 3, 2).unwrap();
        s.insert("a", 2, (0..24).map(|v| v as f32 * 0.5).collect()).unwrap();
        s.insert("b", 0, vec![]).unwrap();
        s
    }

    #[test]
    fn layout_and_round_trip() {
        let s = sample();
        // variant 1, layer 2 is the fourth block of 6
        assert_eq!(s.slice("a", 1, 2).unwrap()[0], 9.0);
        assert_eq!(s.matrix("a", 0, 1).unwrap().row(1), [1.5, 2.0, 2.5]);
        let mut a = Vec::new();
        s.write(&mut a).unwrap();
        let back = TeacherRepSet::read(&mut a.as_slice()).unwrap();
        assert_eq!(back, s);
        let mut b = Vec::new();
        back.write(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_tuple_is_named() {
        let s = sample();
        let msg = s.slice("a", 2, 1).unwrap_err().to_string();
        assert!(msg.contains("variant 2") && msg.contains("utterance a"), "{msg}");
        assert!(s.slice("a", 0, 0).is_err());
        assert!(s.slice("a", 0, 3).is_err());
        assert!(matches!(s.slice("zz", 0, 1), Err(Error::Missing(_))));
    }

    #[test]
    fn token_consistency() {
        let s = sample();
        assert!(s.check_tokens([("a", 2), ("b", 0)]).is_ok());
        let err = s.check_tokens([("a", 3)]).unwrap_err();
        assert!(matches!(err, Error::Consistency(ref m) if m.contains("utterance a")));
    }

    #[test]
    fn corruption() {
        let mut a = Vec::new();
        sample().write(&mut a).unwrap();
        for cut in 0..a.len() {
            assert!(TeacherRepSet::read(&mut &a[..cut]).is_err());
        }
        let mut v = a.clone();
        v[4] = 9;
        assert!(matches!(TeacherRepSet::read(&mut v.as_slice()), Err(Error::Format(_))));
    }
}
