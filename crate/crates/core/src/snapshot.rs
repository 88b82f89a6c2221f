//! Snapshot files.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! "SHEF" | version u32 | q u32 | N u32 | L f64 | t f64 | N^q × f64
//! ```
//!
//! One-dimensional snapshots can also be written as `x,value` CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, TorusGrid};

pub const MAGIC: &[u8; 4] = b"SHEF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn write_binary<W: Write>(mut out: W, field: &Field, t: f64) -> Result<()> {
    let g = field.grid();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(g.points() as u32).to_le_bytes());
    buf.extend_from_slice(&g.extent().to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Reads a snapshot, returning the field and its time.
pub fn read_binary<R: Read>(mut input: R) -> Result<(Field, f64)> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("snapshot shorter than its header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("not a snapshot file (bad magic)".into()));
    }
    let version = u32_at(&header, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let q = u32_at(&header, 8) as usize;
    let n = u32_at(&header, 12) as usize;
    let grid = TorusGrid::new(q, f64_at(&header, 16), n)?;
    let t = f64_at(&header, 24);
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != 8 * grid.len() {
        return Err(Error::Format(format!(
            "snapshot body holds {} bytes, expected {}",
            body.len(),
            8 * grid.len()
        )));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((Field::new(grid, values)?, t))
}

pub fn save(path: &Path, field: &Field, t: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary(&mut w, field, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Field, f64)> {
    read_binary(BufReader::new(File::open(path)?))
}

/// `x,value` rows; only for one-dimensional fields.
pub fn write_csv<W: Write>(out: W, field: &Field) -> Result<()> {
    let g = field.grid();
    if g.dim() != 1 {
        return Err(Error::param("field", "CSV export is one-dimensional only"));
    }
    let wrap = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "value"]).map_err(wrap)?;
    for (k, v) in field.values().iter().enumerate() {
        w.write_record([format!("{:e}", g.coords(k)[0]), format!("{v:e}")]).map_err(wrap)?;
    }
    w.flush()?;
    Ok(())
}
