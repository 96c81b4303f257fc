//! Versioned binary parameter files.
//!
//! ```text
//! "CXCK"            magic
//! u32               format version
//! u64 + bytes       descriptor (UTF-8 JSON)
//! u64               blob count
//! per blob:
//!   u32 + bytes     name
//!   u32             rank, then u64 per dimension
//!   f64 × n         real plane
//!   f64 × n         imaginary plane
//! ```
//!
//! All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CXCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub blobs: Vec<NamedBlob>,
}

impl Checkpoint {
    pub fn blob(&self, name: &str) -> Result<&NamedBlob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing blob `{name}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.descriptor.len() as u64).to_le_bytes())?;
        w.write_all(self.descriptor.as_bytes())?;
        w.write_all(&(self.blobs.len() as u64).to_le_bytes())?;
        for b in &self.blobs {
            w.write_all(&(b.name.len() as u32).to_le_bytes())?;
            w.write_all(b.name.as_bytes())?;
            w.write_all(&(b.shape.len() as u32).to_le_bytes())?;
            for &d in &b.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in b.re.iter().chain(&b.im) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::format("checkpoint", e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = read_u32(&mut r).map_err(bad)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let len = read_u64(&mut r).map_err(bad)? as usize;
        let descriptor = read_string(&mut r, len).map_err(bad)?;
        let count = read_u64(&mut r).map_err(bad)?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let len = read_u32(&mut r).map_err(bad)? as usize;
            let name = read_string(&mut r, len).map_err(bad)?;
            let rank = read_u32(&mut r).map_err(bad)?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(read_u64(&mut r).map_err(bad)? as usize);
            }
            let n: usize = shape.iter().product();
            let re = read_f64s(&mut r, n).map_err(bad)?;
            let im = read_f64s(&mut r, n).map_err(bad)?;
            blobs.push(NamedBlob {
                name,
                shape,
                re,
                im,
            });
        }
        Ok(Self { descriptor, blobs })
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// interrupted write never leaves a truncated checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(&tmp, e))?;
        w.into_inner()
            .map_err(|e| Error::io(&tmp, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> std::io::Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
