//! Flat binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SEMA1"                 5 bytes
//! version                 u32
//! repeated until EOF:
//!   name length           u64
//!   name                  UTF-8 bytes
//!   rank                  u64
//!   dims                  rank × u64
//!   payload               product(dims) × f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"SEMA1";
pub const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads `buf.len()` bytes, or reports a clean end of stream when none remain.
fn read_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(Error::Checkpoint("truncated record header".into())),
            n => filled += n,
        }
    }
    Ok(true)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 8];
        if !read_or_eof(&mut r, &mut len)? {
            break;
        }
        let name_len = u64::from_le_bytes(len) as usize;
        if name_len > 1 << 20 {
            return Err(Error::Checkpoint(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?;
        let rank = read_u64(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let mut payload = vec![0u8; numel * 8];
        r.read_exact(&mut payload)
            .map_err(|_| Error::Checkpoint(format!("{name}: truncated payload")))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let tensors: Vec<(&str, &Tensor)> = store
        .iter()
        .map(|(_, p)| (p.name.as_str(), &p.value))
        .collect();
    write_tensors(BufWriter::new(file), &tensors)
}

/// Overwrites every parameter of `store` from the checkpoint at `path`. Names and
/// shapes must match exactly.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let tensors = read_tensors(BufReader::new(file))?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
        let p = store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} does not match model {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    Ok(())
}
