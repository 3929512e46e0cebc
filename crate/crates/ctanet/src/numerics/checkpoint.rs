//! Binary checkpoint serialization.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic   5 bytes  "CTAK1"
//! repeat per parameter until end of file:
//!   name_len  u64
//!   name      name_len bytes, UTF-8
//!   rank      u64
//!   dims      rank x u64
//!   payload   prod(dims) x f64
//! ```
//!
//! Values round-trip bit-exactly. The loader validates structure only;
//! matching names and shapes against a model is the caller's job.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"CTAK1";

/// Sanity cap against corrupt headers asking for absurd allocations.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, entries: &[CheckpointEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(werr)?;
    for entry in entries {
        let expect: usize = entry.shape.iter().product();
        if expect != entry.data.len() {
            return Err(Error::Contract(format!(
                "checkpoint entry `{}` has {} values but shape {:?}",
                entry.name,
                entry.data.len(),
                entry.shape
            )));
        }
        w.write_all(&(entry.name.len() as u64).to_le_bytes())
            .map_err(werr)?;
        w.write_all(entry.name.as_bytes()).map_err(werr)?;
        w.write_all(&(entry.shape.len() as u64).to_le_bytes())
            .map_err(werr)?;
        for &d in &entry.shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(werr)?;
        }
        for &v in &entry.data {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    w.flush().map_err(werr)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad checkpoint magic {:?}, expected {:?}",
            path.display(),
            magic,
            MAGIC
        )));
    }

    let mut entries = Vec::new();
    loop {
        let name_len = match read_u64_or_eof(&mut r, path)? {
            Some(v) => v,
            None => break,
        };
        if name_len == 0 || name_len > 4096 {
            return Err(Error::Format(format!(
                "{}: implausible parameter name length {name_len}",
                path.display()
            )));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        read_exact(&mut r, &mut name_bytes, path, "parameter name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| {
            Error::Format(format!(
                "{}: parameter name is not valid UTF-8",
                path.display()
            ))
        })?;

        let rank = read_u64(&mut r, path, "rank")?;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!(
                "{}: parameter `{name}` has implausible rank {rank}",
                path.display()
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut elements: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut r, path, "dimension")?;
            elements = elements.saturating_mul(d.max(1));
            shape.push(d as usize);
        }
        if elements > MAX_ELEMENTS {
            return Err(Error::Format(format!(
                "{}: parameter `{name}` claims {elements} elements",
                path.display()
            )));
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            read_exact(&mut r, &mut buf, path, "payload")?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push(CheckpointEntry { name, shape, data });
    }
    Ok(entries)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!(
                "{}: truncated checkpoint while reading {what}",
                path.display()
            ))
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u64(r: &mut impl Read, path: &Path, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, path, what)?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads a u64 or reports a clean end of file at a record boundary.
fn read_u64_or_eof(r: &mut impl Read, path: &Path) -> Result<Option<u64>> {
    let mut buf = [0u8; 8];
    let mut filled = 0;
    while filled < 8 {
        let n = r.read(&mut buf[filled..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(Error::Format(format!(
                "{}: truncated checkpoint at record boundary",
                path.display()
            )));
        }
        filled += n;
    }
    Ok(Some(u64::from_le_bytes(buf)))
}
