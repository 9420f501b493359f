//! File formats: snapshot binaries with JSON sidecars, diagnostics CSV, and
//! atomic writes (temporary file plus rename).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// JSON sidecar of a snapshot binary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub cells_per_axis: usize,
    pub half_length: f64,
    pub time: f64,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub field: Field,
    pub time: f64,
    pub s: f64,
}

/// Sidecar path of a snapshot binary: `x.bin` → `x.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes the field as little-endian `f64` in row-major order plus its sidecar.
pub fn write_snapshot(bin: &Path, field: &Field, time: f64, s: f64) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * field.len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(bin, &bytes)?;
    let g = field.grid();
    let meta = SnapshotMeta {
        dim: g.dim(),
        cells_per_axis: g.cells_per_axis(),
        half_length: g.half_length(),
        time,
        s,
    };
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    write_atomic(&sidecar_path(bin), text.as_bytes())
}

/// Reads a snapshot binary and its sidecar. Accepts either file's path.
pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bin = path.with_extension("bin");
    let side = sidecar_path(&bin);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: SnapshotMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: side.display().to_string(),
        message: e.to_string(),
    })?;
    let grid = Grid::new(meta.dim, meta.cells_per_axis, meta.half_length)?;
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::Format {
            path: bin.display().to_string(),
            message: format!("expected {} bytes, found {}", 8 * grid.len(), bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Snapshot {
        field: Field::new(grid, values)?,
        time: meta.time,
        s: meta.s,
    })
}

/// Snapshot binaries in a directory, sorted by file name.
pub fn list_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn write_csv_file(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut buf = Vec::new();
    diagnostics::write_csv(records, &mut buf).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &buf)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    diagnostics::read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}
