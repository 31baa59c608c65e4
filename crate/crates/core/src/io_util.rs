use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{read_err, Error, Result};

pub(crate) fn read_magic<R: Read>(r: &mut R, expected: &[u8; 4]) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(read_err("magic"))?;
    if &magic != expected {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expected)
        )));
    }
    Ok(())
}

/// `u16` length prefix followed by UTF-8 bytes.
pub(crate) fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::contract(format!("string too long for u16 prefix: {s:.40}")))?;
    w.write_u16::<LittleEndian>(len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u16::<LittleEndian>().map_err(read_err("string length"))?;
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(read_err("string"))?;
    String::from_utf8(buf).map_err(|_| Error::format("string is not valid UTF-8"))
}

/// Reads `count` little-endian f32 values. The buffer grows with the data
/// actually present, so a corrupt count cannot trigger a huge allocation.
pub(crate) fn read_f32_vec<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f32>> {
    let bytes = count
        .checked_mul(4)
        .ok_or_else(|| Error::format(format!("{what}: element count {count} overflows")))?;
    let mut buf = Vec::new();
    r.take(bytes as u64).read_to_end(&mut buf)?;
    if buf.len() != bytes {
        return Err(Error::format(format!(
            "truncated file while reading {what} ({} of {bytes} bytes)",
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32_slice<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}
