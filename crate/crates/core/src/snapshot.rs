//! Field snapshots: a flat little-endian `f64` payload (`<stem>.bin`) with a
//! JSON sidecar header (`<stem>.json`).
//!
//! Payloads are row-major over the grid. Wave fields interleave `re, im`
//! per node; drift fields interleave one component per dimension.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Boundary, DensityField, Grid, VectorField, WaveField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Wave,
    Density,
    Drift,
}

impl FieldKind {
    fn values_per_node(self, dims: usize) -> usize {
        match self {
            FieldKind::Wave => 2,
            FieldKind::Density => 1,
            FieldKind::Drift => dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dims: usize,
    pub points: Vec<usize>,
    pub extent: Vec<[f64; 2]>,
    pub boundary: Vec<Boundary>,
    pub time: f64,
    pub kind: FieldKind,
}

impl SnapshotHeader {
    fn new(grid: &Grid, time: f64, kind: FieldKind) -> Self {
        Self {
            dims: grid.dims(),
            points: grid.axes().iter().map(|a| a.points).collect(),
            extent: grid.axes().iter().map(|a| [a.min, a.max]).collect(),
            boundary: grid.axes().iter().map(|a| a.boundary).collect(),
            time,
            kind,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        if self.points.len() != self.dims
            || self.extent.len() != self.dims
            || self.boundary.len() != self.dims
        {
            return Err(Error::InvalidGrid("snapshot header arrays disagree with dims".into()));
        }
        Grid::new(
            (0..self.dims)
                .map(|k| Axis::new(self.extent[k][0], self.extent[k][1], self.points[k], self.boundary[k]))
                .collect(),
        )
    }
}

pub fn payload_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn header_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn write_raw(stem: &Path, header: &SnapshotHeader, data: impl Iterator<Item = f64>) -> Result<Vec<PathBuf>> {
    let bytes: Vec<u8> = data.flat_map(f64::to_le_bytes).collect();
    let bin = payload_path(stem);
    let json = header_path(stem);
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(header)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(vec![bin, json])
}

fn read_raw(stem: &Path, expected: FieldKind) -> Result<(SnapshotHeader, Grid, Vec<f64>)> {
    let json = header_path(stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let header: SnapshotHeader = serde_json::from_str(&text)?;
    if header.kind != expected {
        return Err(Error::InvalidField(format!(
            "snapshot {} holds {:?}, expected {:?}",
            stem.display(),
            header.kind,
            expected
        )));
    }
    let grid = header.grid()?;
    let bin = payload_path(stem);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let want = grid.len() * header.kind.values_per_node(grid.dims()) * 8;
    if bytes.len() != want {
        return Err(Error::InvalidField(format!(
            "payload {} has {} bytes, header implies {want}",
            bin.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, grid, data))
}

/// Writes `<stem>.bin` and `<stem>.json`, returning both paths.
pub fn write_wave(stem: &Path, psi: &WaveField) -> Result<Vec<PathBuf>> {
    let header = SnapshotHeader::new(psi.grid(), psi.time(), FieldKind::Wave);
    write_raw(stem, &header, psi.values().iter().flat_map(|c| [c.re, c.im]))
}

pub fn write_density(stem: &Path, p: &DensityField) -> Result<Vec<PathBuf>> {
    let header = SnapshotHeader::new(p.grid(), p.time(), FieldKind::Density);
    write_raw(stem, &header, p.values().iter().copied())
}

pub fn write_drift(stem: &Path, v: &VectorField) -> Result<Vec<PathBuf>> {
    let header = SnapshotHeader::new(v.grid(), v.time(), FieldKind::Drift);
    write_raw(stem, &header, v.values().iter().copied())
}

pub fn read_wave(stem: &Path) -> Result<WaveField> {
    let (h, grid, data) = read_raw(stem, FieldKind::Wave)?;
    let values = data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    WaveField::new(grid, values, h.time)
}

pub fn read_density(stem: &Path) -> Result<DensityField> {
    let (h, grid, data) = read_raw(stem, FieldKind::Density)?;
    DensityField::new(grid, data, h.time)
}

pub fn read_drift(stem: &Path) -> Result<VectorField> {
    let (h, grid, data) = read_raw(stem, FieldKind::Drift)?;
    VectorField::new(grid, data, h.time)
}
