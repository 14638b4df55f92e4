//! Binary field snapshots.
//!
//! Little-endian layout: magic `NLCB`, u32 version (1), u32 kind
//! (0 = scalar, 1 = vector), u32 nx, u32 ny, f64 lx, f64 ly, then row-major
//! f64 payload (vector fields store the x-component block first, then the
//! y-component block).

use crate::error::Error;
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::Result;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NLCB";
const VERSION: u32 = 1;

#[derive(Debug)]
pub enum SnapshotData {
    Scalar(ScalarField),
    Vector(VectorField),
}

impl SnapshotData {
    pub fn grid(&self) -> GridSpec {
        match self {
            SnapshotData::Scalar(f) => f.grid,
            SnapshotData::Vector(v) => v.grid,
        }
    }
}

pub fn write_scalar(path: &Path, f: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, 0, f.grid)?;
    write_f64s(&mut w, &f.values)?;
    w.flush()?;
    Ok(())
}

pub fn write_vector(path: &Path, v: &VectorField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, 1, v.grid)?;
    write_f64s(&mut w, &v.xcomp)?;
    write_f64s(&mut w, &v.ycomp)?;
    w.flush()?;
    Ok(())
}

pub fn read_any(path: &Path) -> Result<SnapshotData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let kind = read_u32(&mut r)?;
    let nx = read_u32(&mut r)? as usize;
    let ny = read_u32(&mut r)? as usize;
    let lx = read_f64(&mut r)?;
    let ly = read_f64(&mut r)?;
    let grid = GridSpec::new(nx, ny, lx, ly)
        .map_err(|e| Error::Snapshot(format!("invalid grid in snapshot: {e}")))?;
    match kind {
        0 => {
            let values = read_f64s(&mut r, grid.cell_count())?;
            Ok(SnapshotData::Scalar(ScalarField { grid, values }))
        }
        1 => {
            let xcomp = read_f64s(&mut r, (nx + 1) * ny)?;
            let ycomp = read_f64s(&mut r, nx * (ny + 1))?;
            Ok(SnapshotData::Vector(VectorField { grid, xcomp, ycomp }))
        }
        k => Err(Error::Snapshot(format!("unknown field kind {k}"))),
    }
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    match read_any(path)? {
        SnapshotData::Scalar(f) => Ok(f),
        SnapshotData::Vector(_) => Err(Error::Snapshot(format!(
            "{} holds a vector field, expected scalar",
            path.display()
        ))),
    }
}

pub fn read_vector(path: &Path) -> Result<VectorField> {
    match read_any(path)? {
        SnapshotData::Vector(v) => Ok(v),
        SnapshotData::Scalar(_) => Err(Error::Snapshot(format!(
            "{} holds a scalar field, expected vector",
            path.display()
        ))),
    }
}

fn write_header(w: &mut impl Write, kind: u32, grid: GridSpec) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&(grid.nx as u32).to_le_bytes())?;
    w.write_all(&(grid.ny as u32).to_le_bytes())?;
    w.write_all(&grid.lx.to_le_bytes())?;
    w.write_all(&grid.ly.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_round_trip_is_bit_exact() {
        let g = GridSpec::new(8, 6, 1.5, 0.5).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x * 17.0).sin() * (y + 1.0).ln());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.nlcb");
        write_scalar(&path, &f).unwrap();
        let back = read_scalar(&path).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn vector_round_trip_is_bit_exact() {
        let g = GridSpec::new(5, 9, 1.0, 2.0).unwrap();
        let v = VectorField::from_fn(g, |x, y| x - y, |x, y| x * y + 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.nlcb");
        write_vector(&path, &v).unwrap();
        let back = read_vector(&path).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn wrong_kind_is_reported() {
        let g = GridSpec::new(4, 4, 1.0, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.nlcb");
        write_scalar(&path, &ScalarField::zeros(g)).unwrap();
        assert!(read_vector(&path).is_err());
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.nlcb");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(matches!(read_any(&path), Err(Error::Snapshot(_))));
    }
}
