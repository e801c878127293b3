//! Grid import/export.
//!
//! Three formats:
//! - `.grid` — the native binary container: 8-byte magic `MLGRID01`, u32 LE
//!   voxel counts, f64 LE spacing, 3 x f64 LE origin, then nx*ny*nz f32 LE
//!   values in x-fastest order. Round-trips bit-exactly for f32 values.
//! - VTK legacy structured points (ASCII, CELL_DATA) for visualization.
//! - PGM (P2) images for 2D fields, values clamped to [0, 1] and scaled to
//!   0..255, top image row = highest y row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{GridDims, GridError, ScalarGrid};

pub const GRID_MAGIC: &[u8; 8] = b"MLGRID01";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a grid file (bad magic) in {0}")]
    BadMagic(String),
    #[error("corrupt grid file {0}: {1}")]
    Corrupt(String, String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("PGM export requires a 2D grid (nz = 1), got nz = {0}")]
    NotPlanar(usize),
}

fn wrap<T>(path: &Path, r: std::io::Result<T>) -> Result<T, IoError> {
    r.map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

/// Write the native binary container.
pub fn write_grid(grid: &ScalarGrid, path: &Path) -> Result<(), IoError> {
    let file = wrap(path, File::create(path))?;
    let mut w = BufWriter::new(file);
    let d = &grid.dims;
    wrap(path, w.write_all(GRID_MAGIC))?;
    for n in [d.nx, d.ny, d.nz] {
        wrap(path, w.write_all(&(n as u32).to_le_bytes()))?;
    }
    wrap(path, w.write_all(&d.spacing.to_le_bytes()))?;
    for c in d.origin {
        wrap(path, w.write_all(&c.to_le_bytes()))?;
    }
    for &v in &grid.values {
        wrap(path, w.write_all(&(v as f32).to_le_bytes()))?;
    }
    wrap(path, w.flush())
}

/// Read the native binary container.
pub fn read_grid(path: &Path) -> Result<ScalarGrid, IoError> {
    let file = wrap(path, File::open(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    wrap(path, r.read_exact(&mut magic))?;
    if &magic != GRID_MAGIC {
        return Err(IoError::BadMagic(path.display().to_string()));
    }
    let mut u32buf = [0u8; 4];
    let mut n = [0usize; 3];
    for slot in &mut n {
        wrap(path, r.read_exact(&mut u32buf))?;
        *slot = u32::from_le_bytes(u32buf) as usize;
    }
    let mut f64buf = [0u8; 8];
    wrap(path, r.read_exact(&mut f64buf))?;
    let spacing = f64::from_le_bytes(f64buf);
    let mut origin = [0.0; 3];
    for slot in &mut origin {
        wrap(path, r.read_exact(&mut f64buf))?;
        *slot = f64::from_le_bytes(f64buf);
    }
    let dims = GridDims::new(n[0], n[1], n[2], spacing, origin)
        .map_err(|e| IoError::Corrupt(path.display().to_string(), e.to_string()))?;
    let mut values = Vec::with_capacity(dims.len());
    let mut f32buf = [0u8; 4];
    for _ in 0..dims.len() {
        wrap(path, r.read_exact(&mut f32buf))?;
        values.push(f32::from_le_bytes(f32buf) as f64);
    }
    ScalarGrid::from_values(dims, values)
        .map_err(|e| IoError::Corrupt(path.display().to_string(), e.to_string()))
}

/// Legacy-VTK structured points export with one scalar per cell.
pub fn write_vtk(grid: &ScalarGrid, name: &str, path: &Path) -> Result<(), IoError> {
    let file = wrap(path, File::create(path))?;
    let mut w = BufWriter::new(file);
    let d = &grid.dims;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("millable voxel field\n");
    s.push_str("ASCII\n");
    s.push_str("DATASET STRUCTURED_POINTS\n");
    s.push_str(&format!("DIMENSIONS {} {} {}\n", d.nx + 1, d.ny + 1, d.nz + 1));
    s.push_str(&format!("ORIGIN {} {} {}\n", d.origin[0], d.origin[1], d.origin[2]));
    s.push_str(&format!("SPACING {} {} {}\n", d.spacing, d.spacing, d.spacing));
    s.push_str(&format!("CELL_DATA {}\n", d.len()));
    s.push_str(&format!("SCALARS {name} float 1\n"));
    s.push_str("LOOKUP_TABLE default\n");
    wrap(path, w.write_all(s.as_bytes()))?;
    for &v in &grid.values {
        wrap(path, writeln!(w, "{}", v as f32))?;
    }
    wrap(path, w.flush())
}

/// ASCII PGM export for 2D fields. Values are clamped to [0, 1].
pub fn write_pgm(grid: &ScalarGrid, path: &Path) -> Result<(), IoError> {
    let d = &grid.dims;
    if d.nz != 1 {
        return Err(IoError::NotPlanar(d.nz));
    }
    let file = wrap(path, File::create(path))?;
    let mut w = BufWriter::new(file);
    wrap(path, writeln!(w, "P2"))?;
    wrap(path, writeln!(w, "{} {}", d.nx, d.ny))?;
    wrap(path, writeln!(w, "255"))?;
    for j in (0..d.ny).rev() {
        let mut row = String::with_capacity(d.nx * 4);
        for i in 0..d.nx {
            let v = grid.get(i, j, 0).clamp(0.0, 1.0);
            let px = (v * 255.0).round() as u32;
            if i > 0 {
                row.push(' ');
            }
            row.push_str(&px.to_string());
        }
        wrap(path, writeln!(w, "{row}"))?;
    }
    wrap(path, w.flush())
}
