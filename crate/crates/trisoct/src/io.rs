//! Raw little-endian `f64` arrays with JSON sidecars.
//!
//! `<stem>.raw` holds the values in memory order; `<stem>.json` describes
//! shape, index order, units and provenance. Volumes are indexed
//! `(z·ny + y)·nx + x`, projection stacks `(view·rows + row)·cols + col`.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trisoct_core::{ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume, VolumeGrid};

use crate::CliError;

pub const VOLUME_ORDER: &str = "x fastest: index = (z*ny + y)*nx + x";
pub const STACK_ORDER: &str = "col fastest: index = (view*rows + row)*cols + col";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dtype: String,
    pub byte_order: String,
    /// Slowest axis first.
    pub shape: Vec<usize>,
    pub order: String,
    pub units: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<VolumeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ConeBeamGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident_counts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_used: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png_window: Option<[f64; 2]>,
}

impl Sidecar {
    fn new(kind: &str, shape: Vec<usize>, order: &str, units: &str) -> Self {
        Self {
            dtype: "float64".into(),
            byte_order: "little".into(),
            shape,
            order: order.into(),
            units: units.into(),
            kind: kind.into(),
            grid: None,
            geometry: None,
            seed: None,
            incident_counts: None,
            method: None,
            view_stride: None,
            threshold_used: None,
            png_window: None,
        }
    }

    pub fn for_volume(volume: &Volume, kind: &str) -> Self {
        let g = &volume.grid;
        Self {
            grid: Some(g.clone()),
            ..Self::new(kind, vec![g.nz, g.ny, g.nx], VOLUME_ORDER, "1/mm")
        }
    }

    pub fn for_stack(stack: &ProjectionStack, kind: &str) -> Self {
        let g = &stack.geometry;
        let units = match stack.kind {
            ProjectionKind::Counts => "counts",
            ProjectionKind::LogNormalized => "dimensionless",
        };
        Self {
            geometry: Some(g.clone()),
            ..Self::new(kind, vec![g.n_views(), g.detector_rows, g.detector_cols], STACK_ORDER, units)
        }
    }
}

pub fn raw_path(stem: &Path) -> PathBuf {
    stem.with_extension("raw")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_raw(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<f64>, CliError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    if bytes.len() != expected * 8 {
        return Err(CliError::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 8,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

fn check_header(sidecar: &Sidecar, path: &Path) -> Result<(), CliError> {
    if sidecar.dtype != "float64" || sidecar.byte_order != "little" {
        return Err(CliError::Format(format!(
            "{}: unsupported encoding {} {}",
            path.display(),
            sidecar.dtype,
            sidecar.byte_order
        )));
    }
    Ok(())
}

pub fn write_volume(stem: &Path, volume: &Volume, sidecar: &Sidecar) -> Result<(), CliError> {
    write_raw(&raw_path(stem), &volume.values)?;
    write_json(&sidecar_path(stem), sidecar)
}

pub fn read_volume(stem: &Path) -> Result<(Volume, Sidecar), CliError> {
    let json = sidecar_path(stem);
    let sidecar: Sidecar = read_json(&json)?;
    check_header(&sidecar, &json)?;
    let grid = sidecar
        .grid
        .clone()
        .ok_or_else(|| CliError::Format(format!("{}: no grid in sidecar", json.display())))?;
    let values = read_raw(&raw_path(stem), grid.len())?;
    Ok((Volume::from_values(grid, values)?, sidecar))
}

pub fn write_stack(stem: &Path, stack: &ProjectionStack, sidecar: &Sidecar) -> Result<(), CliError> {
    write_raw(&raw_path(stem), &stack.values)?;
    write_json(&sidecar_path(stem), sidecar)
}

pub fn read_stack(stem: &Path, kind: ProjectionKind) -> Result<(ProjectionStack, Sidecar), CliError> {
    let json = sidecar_path(stem);
    let sidecar: Sidecar = read_json(&json)?;
    check_header(&sidecar, &json)?;
    let geometry = sidecar
        .geometry
        .clone()
        .ok_or_else(|| CliError::Format(format!("{}: no geometry in sidecar", json.display())))?;
    let values = read_raw(&raw_path(stem), geometry.n_measurements())?;
    Ok((ProjectionStack::new(geometry, kind, values)?, sidecar))
}
