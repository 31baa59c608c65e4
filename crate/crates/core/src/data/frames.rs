//! FRMS acoustic frame files: `"FRMS" | T_raw u32 | D_in u32 | f32 × T_raw·D_in`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{read_err, Result};
use crate::io_util::{read_f32_vec, read_magic, write_f32_slice};
use crate::tensor::Matrix;

pub const FRMS_MAGIC: &[u8; 4] = b"FRMS";

pub fn write_frames<W: Write>(w: &mut W, frames: &Matrix<f32>) -> Result<()> {
    w.write_all(FRMS_MAGIC)?;
    w.write_u32::<LittleEndian>(frames.rows() as u32)?;
    w.write_u32::<LittleEndian>(frames.cols() as u32)?;
    write_f32_slice(w, frames.data())
}

pub fn read_frames<R: Read>(r: &mut R) -> Result<Matrix<f32>> {
    read_magic(r, FRMS_MAGIC)?;
    let rows = r.read_u32::<LittleEndian>().map_err(read_err("frame count"))? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(read_err("feature dim"))? as usize;
    let data = read_f32_vec(r, rows.saturating_mul(cols), "frame data")?;
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn save_frames(path: impl AsRef<Path>, frames: &Matrix<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frames(&mut w, frames)?;
    w.flush()?;
    Ok(())
}

pub fn load_frames(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    read_frames(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn round_trip_and_truncation() {
        let m = Matrix::from_vec(3, 2, vec![1.0f32, -0.5, 2.25, 0.0, 7.0, -3.0]);
        let mut a = Vec::new();
        write_frames(&mut a, &m).unwrap();
        let back = read_frames(&mut a.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        write_frames(&mut b, &back).unwrap();
        assert_eq!(a, b);
        for cut in [0, 3, 7, 11, a.len() - 1] {
            assert!(matches!(read_frames(&mut &a[..cut]), Err(Error::Format(_))));
        }
    }
}
