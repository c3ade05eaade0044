//! Compact binary container for matrices and CSV export of datasets.
//!
//! Container layout: magic `HCLD`, version byte, little-endian u32 entry
//! count, then per entry a u16 name length + UTF-8 name, u64 rows, u64 cols,
//! and rows*cols little-endian f64 values in row-major order.

use crate::error::{CoreError, Result};
use crate::simulate::MultimodalDataset;
use nalgebra::DMatrix;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"HCLD";
const VERSION: u8 = 1;

pub fn write_container<W: Write>(mut w: W, entries: &[(&str, &DMatrix<f64>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    let count = u32::try_from(entries.len())
        .map_err(|_| CoreError::Container("too many entries".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, m) in entries {
        let name_bytes = name.as_bytes();
        let len = u16::try_from(name_bytes.len())
            .map_err(|_| CoreError::Container(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_all(&m[(i, j)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<(String, DMatrix<f64>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::Container(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(CoreError::Container(format!("unsupported version {}", version[0])));
    }
    let mut count_buf = [0u8; 4];
    r.read_exact(&mut count_buf)?;
    let count = u32::from_le_bytes(count_buf);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut len_buf = [0u8; 2];
        r.read_exact(&mut len_buf)?;
        let len = u16::from_le_bytes(len_buf) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| CoreError::Container(format!("bad name: {e}")))?;
        let mut dim = [0u8; 8];
        r.read_exact(&mut dim)?;
        let rows = u64::from_le_bytes(dim) as usize;
        r.read_exact(&mut dim)?;
        let cols = u64::from_le_bytes(dim) as usize;
        let mut m = DMatrix::zeros(rows, cols);
        let mut val = [0u8; 8];
        for i in 0..rows {
            for j in 0..cols {
                r.read_exact(&mut val)?;
                m[(i, j)] = f64::from_le_bytes(val);
            }
        }
        out.push((name, m));
    }
    Ok(out)
}

pub fn write_container_file(path: &Path, entries: &[(&str, &DMatrix<f64>)]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_container(std::io::BufWriter::new(f), entries)
}

pub fn read_container_file(path: &Path) -> Result<Vec<(String, DMatrix<f64>)>> {
    let f = std::fs::File::open(path)?;
    read_container(std::io::BufReader::new(f))
}

pub fn find_entry<'a>(entries: &'a [(String, DMatrix<f64>)], name: &str) -> Result<&'a DMatrix<f64>> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| CoreError::Container(format!("missing entry {name}")))
}

/// CSV export: header row z_1..z_r, x_1..x_d (latent columns only when
/// retained), one sample per row.
pub fn dataset_to_csv<W: Write>(mut w: W, data: &MultimodalDataset) -> Result<()> {
    let r = data.z.as_ref().map_or(0, |z| z.ncols());
    let d = data.x.ncols();
    let mut header = Vec::with_capacity(r + d);
    for j in 0..r {
        header.push(format!("z_{}", j + 1));
    }
    for j in 0..d {
        header.push(format!("x_{}", j + 1));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.n {
        let mut row = Vec::with_capacity(r + d);
        if let Some(z) = &data.z {
            for j in 0..r {
                row.push(format_float(z[(i, j)]));
            }
        }
        for j in 0..d {
            row.push(format_float(data.x[(i, j)]));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Shortest round-trip decimal representation; deterministic across platforms.
pub fn format_float(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}
