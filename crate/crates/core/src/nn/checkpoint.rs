//! TKDM checkpoints.
//!
//! ```text
//! "TKDM" | version u32 | config digest [32] | blob count u32
//! per blob: name len u16 | name utf-8 | rank u8 | dims u32 × rank | f32 data
//! ```
//! Little-endian throughout; blob data is row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Model, ModelConfig};
use crate::distill::RegressionParams;
use crate::error::{read_err, Error, Result};
use crate::io_util::{read_f32_vec, read_magic, read_string, write_f32_slice, write_string};

pub const TKDM_MAGIC: &[u8; 4] = b"TKDM";
pub const TKDM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Blob {
    pub fn scalar(name: impl Into<String>, value: f32) -> Self {
        Self {
            name: name.into(),
            dims: vec![],
            data: vec![value],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>) -> Self {
        let mut blobs = Vec::new();
        model.visit(&mut |name, dims, data| {
            blobs.push(Blob {
                name: name.to_string(),
                dims: dims.iter().map(|&d| d as u32).collect(),
                data: data.to_vec(),
            })
        });
        Self {
            digest: model.config.digest(),
            blobs,
        }
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    /// Rebuilds a model for `config`, failing with a consistency error when
    /// the stored digest or any parameter shape disagrees.
    pub fn to_model(&self, config: &ModelConfig) -> Result<Model<f32>> {
        if self.digest != config.digest() {
            return Err(Error::Consistency(format!(
                "checkpoint was written for a different model config (expected {})",
                config.canonical_string()
            )));
        }
        let mut model = Model::<f32>::init(config, 0)?;
        if let (Some(w), Some(_)) = (self.blob("regression.weight"), self.blob("regression.bias")) {
            if w.dims.len() != 2 {
                return Err(Error::format("regression.weight must be rank 2"));
            }
            model.regression = Some(RegressionParams::zeros(
                w.dims[1] as usize,
                w.dims[0] as usize,
            ));
        }
        let mut shapes = Vec::new();
        model.visit(&mut |name, dims, _| shapes.push((name.to_string(), dims.to_vec())));
        for (name, dims) in &shapes {
            let blob = self
                .blob(name)
                .ok_or_else(|| Error::Consistency(format!("checkpoint lacks parameter {name}")))?;
            let stored: Vec<usize> = blob.dims.iter().map(|&d| d as usize).collect();
            if &stored != dims {
                return Err(Error::Consistency(format!(
                    "parameter {name} has shape {stored:?}, model expects {dims:?}"
                )));
            }
        }
        let mut missing = None;
        model.visit_mut(&mut |name, data| match self.blob(name) {
            Some(b) => data.copy_from_slice(&b.data),
            None => missing = Some(name.to_string()),
        });
        if let Some(name) = missing {
            return Err(Error::Consistency(format!("checkpoint lacks parameter {name}")));
        }
        Ok(model)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TKDM_MAGIC)?;
        w.write_u32::<LittleEndian>(TKDM_VERSION)?;
        w.write_all(&self.digest)?;
        w.write_u32::<LittleEndian>(self.blobs.len() as u32)?;
        for b in &self.blobs {
            write_string(w, &b.name)?;
            w.write_u8(b.dims.len() as u8)?;
            for &d in &b.dims {
                w.write_u32::<LittleEndian>(d)?;
            }
            write_f32_slice(w, &b.data)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, TKDM_MAGIC)?;
        let version = r.read_u32::<LittleEndian>().map_err(read_err("version"))?;
        if version != TKDM_VERSION {
            return Err(Error::format(format!("unsupported TKDM version {version}")));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest).map_err(read_err("config digest"))?;
        let count = r.read_u32::<LittleEndian>().map_err(read_err("blob count"))?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let name = read_string(r)?;
            let rank = r.read_u8().map_err(read_err("rank"))?;
            let mut dims = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                dims.push(r.read_u32::<LittleEndian>().map_err(read_err("dims"))?);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::format(format!("blob {name} is too large")))?;
            let data = read_f32_vec(r, len, &name)?;
            blobs.push(Blob { name, dims, data });
        }
        Ok(Self { digest, blobs })
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

impl Model<f32> {
    /// Weight of every parameter tensor as a checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(self)
    }
}
