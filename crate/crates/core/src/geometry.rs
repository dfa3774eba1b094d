//! Acquisition geometry and the data containers shared by every module.
//!
//! # Conventions
//!
//! World coordinates are millimetres. The rotation axis is the world `z`
//! axis through the origin (the isocenter). At view angle `β` the source sits
//! at `R·(cos β, sin β, 0)` where `R` is the source-to-axis distance, and the
//! flat detector is perpendicular to the central ray at distance `D`
//! (source-to-detector distance) from the source. The detector column axis is
//! `u = (−sin β, cos β, 0)` and the row axis is `v = (0, 0, 1)`.
//!
//! Pixel `(row, col)` of view `k` has its center at
//!
//! ```text
//! detector_center + (col − (cols−1)/2 − shift_col)·pitch·u
//!                 + (row − (rows−1)/2 − shift_row)·pitch·v
//! ```
//!
//! so a per-view shift `(shift_row, shift_col)` translates the recorded image
//! content by `(+shift_row, +shift_col)` pixels.
//!
//! Volumes are stored `x`-fastest: `index = (iz·ny + iy)·nx + ix`.
//! Projection stacks are stored column-fastest:
//! `index = (view·rows + row)·cols + col`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Regular voxel grid. `center` is the world position of the grid's
/// geometric center; the default places it on the isocenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_size: f64,
    #[serde(default)]
    pub center: Vec3,
}

impl VolumeGrid {
    /// Cubic `n³` grid centered on the rotation axis.
    pub fn cubic(n: usize, voxel_size: f64) -> Self {
        Self {
            nx: n,
            ny: n,
            nz: n,
            voxel_size,
            center: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Grid(format!(
                "dimensions must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Grid(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Grid("center must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.ny + iy) * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let ix = index % self.nx;
        let iy = (index / self.nx) % self.ny;
        let iz = index / (self.nx * self.ny);
        [ix, iy, iz]
    }

    /// Minimum corner of the grid in world coordinates.
    pub fn corner(&self) -> Vec3 {
        let dims = self.dims();
        core::array::from_fn(|a| self.center[a] - 0.5 * dims[a] as f64 * self.voxel_size)
    }

    #[inline]
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let c = self.corner();
        [
            c[0] + (ix as f64 + 0.5) * self.voxel_size,
            c[1] + (iy as f64 + 0.5) * self.voxel_size,
            c[2] + (iz as f64 + 0.5) * self.voxel_size,
        ]
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        let c = self.corner();
        let dims = self.dims();
        (0..3).all(|a| p[a] >= c[a] && p[a] <= c[a] + dims[a] as f64 * self.voxel_size)
    }
}

/// Attenuation coefficients (1/mm) on a [`VolumeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub values: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: VolumeGrid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_values(grid: VolumeGrid, values: Vec<f64>) -> Result<Self> {
        let v = Self { grid, values };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.values.len() != self.grid.len() {
            return Err(Error::shape(self.grid.len(), self.values.len()));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite voxel value at index {i}")));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.grid.index(ix, iy, iz)]
    }
}

/// Line segment `origin → origin + direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn between(from: Vec3, to: Vec3) -> Self {
        Self {
            origin: from,
            direction: sub(to, from),
        }
    }

    pub fn length(&self) -> f64 {
        norm(self.direction)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        core::array::from_fn(|a| self.origin[a] + t * self.direction[a])
    }
}

/// Circular-orbit cone-beam geometry with a flat detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeBeamGeometry {
    pub source_to_axis_distance: f64,
    pub source_to_detector_distance: f64,
    pub detector_rows: usize,
    pub detector_cols: usize,
    pub detector_pixel_pitch: f64,
    pub view_angles: Vec<f64>,
    /// Per-view `(row, col)` shift in pixels; empty means no shift.
    #[serde(default)]
    pub per_view_detector_shift: Vec<[f64; 2]>,
}

impl ConeBeamGeometry {
    /// Full-scan geometry with `n_views` equally spaced angles starting at 0.
    pub fn circular(
        source_to_axis_distance: f64,
        source_to_detector_distance: f64,
        detector_rows: usize,
        detector_cols: usize,
        detector_pixel_pitch: f64,
        n_views: usize,
    ) -> Self {
        let step = TAU / n_views as f64;
        Self {
            source_to_axis_distance,
            source_to_detector_distance,
            detector_rows,
            detector_cols,
            detector_pixel_pitch,
            view_angles: (0..n_views).map(|k| k as f64 * step).collect(),
            per_view_detector_shift: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.source_to_axis_distance;
        let d = self.source_to_detector_distance;
        if !(r > 0.0 && r.is_finite() && d.is_finite() && d > r) {
            return Err(Error::Geometry(format!(
                "need source_to_detector_distance > source_to_axis_distance > 0, got {d} and {r}"
            )));
        }
        if self.detector_rows == 0 || self.detector_cols == 0 {
            return Err(Error::Geometry("detector must have at least one pixel".into()));
        }
        if !(self.detector_pixel_pitch > 0.0 && self.detector_pixel_pitch.is_finite()) {
            return Err(Error::Geometry("detector_pixel_pitch must be positive".into()));
        }
        if self.view_angles.is_empty() {
            return Err(Error::Geometry("at least one view angle is required".into()));
        }
        if self.view_angles.iter().any(|a| !(0.0..TAU).contains(a)) {
            return Err(Error::Geometry("view angles must lie in [0, 2π)".into()));
        }
        if self.view_angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Geometry("view angles must be strictly increasing".into()));
        }
        if !self.per_view_detector_shift.is_empty()
            && self.per_view_detector_shift.len() != self.view_angles.len()
        {
            return Err(Error::Geometry(format!(
                "per_view_detector_shift has {} entries for {} views",
                self.per_view_detector_shift.len(),
                self.view_angles.len()
            )));
        }
        if self
            .per_view_detector_shift
            .iter()
            .flatten()
            .any(|s| !s.is_finite())
        {
            return Err(Error::Geometry("detector shifts must be finite".into()));
        }
        Ok(())
    }

    /// Rejects grids that contain the source position of any view.
    pub fn check_grid(&self, grid: &VolumeGrid) -> Result<()> {
        self.validate()?;
        grid.validate()?;
        for view in 0..self.n_views() {
            if grid.contains_point(self.source_position(view)) {
                return Err(Error::Geometry(format!(
                    "source of view {view} lies inside the volume grid"
                )));
            }
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.view_angles.len()
    }

    pub fn pixels_per_view(&self) -> usize {
        self.detector_rows * self.detector_cols
    }

    pub fn n_measurements(&self) -> usize {
        self.n_views() * self.pixels_per_view()
    }

    pub fn shift(&self, view: usize) -> [f64; 2] {
        self.per_view_detector_shift
            .get(view)
            .copied()
            .unwrap_or([0.0, 0.0])
    }

    pub fn has_shifts(&self) -> bool {
        self.per_view_detector_shift
            .iter()
            .any(|s| s[0] != 0.0 || s[1] != 0.0)
    }

    pub fn without_shifts(&self) -> Self {
        Self {
            per_view_detector_shift: Vec::new(),
            ..self.clone()
        }
    }

    /// Keeps the views listed in `views` (which must be increasing).
    pub fn select_views(&self, views: &[usize]) -> Result<Self> {
        if views.iter().any(|&v| v >= self.n_views()) {
            return Err(Error::Parameter("view index out of range".into()));
        }
        let out = Self {
            view_angles: views.iter().map(|&v| self.view_angles[v]).collect(),
            per_view_detector_shift: if self.per_view_detector_shift.is_empty() {
                Vec::new()
            } else {
                views
                    .iter()
                    .map(|&v| self.per_view_detector_shift[v])
                    .collect()
            },
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }

    #[inline]
    pub fn source_position(&self, view: usize) -> Vec3 {
        let (s, c) = libm::sincos(self.view_angles[view]);
        let r = self.source_to_axis_distance;
        [r * c, r * s, 0.0]
    }

    /// Detector-plane unit axes `(u, v)` for a view.
    #[inline]
    pub fn detector_axes(&self, view: usize) -> (Vec3, Vec3) {
        let (s, c) = libm::sincos(self.view_angles[view]);
        ([-s, c, 0.0], [0.0, 0.0, 1.0])
    }

    /// Detector coordinates `(u, v)` in mm of a pixel center, relative to
    /// the point where the central ray meets the detector.
    #[inline]
    pub fn pixel_uv(&self, view: usize, row: usize, col: usize) -> (f64, f64) {
        let [sr, sc] = self.shift(view);
        let pitch = self.detector_pixel_pitch;
        let u = (col as f64 - 0.5 * (self.detector_cols as f64 - 1.0) - sc) * pitch;
        let v = (row as f64 - 0.5 * (self.detector_rows as f64 - 1.0) - sr) * pitch;
        (u, v)
    }

    pub fn pixel_position(&self, view: usize, row: usize, col: usize) -> Vec3 {
        let (s, c) = libm::sincos(self.view_angles[view]);
        let back = self.source_to_detector_distance - self.source_to_axis_distance;
        let (u, v) = self.pixel_uv(view, row, col);
        [-back * c - u * s, -back * s + u * c, v]
    }

    /// Segment from the source to the center of pixel `(row, col)`.
    pub fn ray(&self, view: usize, row: usize, col: usize) -> Ray {
        Ray::between(self.source_position(view), self.pixel_position(view, row, col))
    }

    /// Radius of the cylinder around the rotation axis seen by every view.
    pub fn fov_radius(&self) -> f64 {
        let half_width = 0.5 * self.detector_cols as f64 * self.detector_pixel_pitch;
        let gamma = libm::atan2(half_width, self.source_to_detector_distance);
        self.source_to_axis_distance * gamma.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Counts,
    LogNormalized,
}

/// Per-view detector images.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub geometry: ConeBeamGeometry,
    pub kind: ProjectionKind,
    pub values: Vec<f64>,
}

impl ProjectionStack {
    pub fn zeros(geometry: ConeBeamGeometry, kind: ProjectionKind) -> Self {
        let values = vec![0.0; geometry.n_measurements()];
        Self {
            geometry,
            kind,
            values,
        }
    }

    pub fn new(geometry: ConeBeamGeometry, kind: ProjectionKind, values: Vec<f64>) -> Result<Self> {
        let s = Self {
            geometry,
            kind,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.check_len()?;
        if self.kind == ProjectionKind::Counts {
            if let Some(i) = self.values.iter().position(|v| !(*v >= 0.0)) {
                return Err(Error::Data(format!(
                    "count stack has negative or NaN value at index {i}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_len(&self) -> Result<()> {
        if self.values.len() != self.geometry.n_measurements() {
            return Err(Error::shape(
                self.geometry.n_measurements(),
                self.values.len(),
            ));
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.geometry.n_views()
    }

    pub fn view(&self, view: usize) -> &[f64] {
        let n = self.geometry.pixels_per_view();
        &self.values[view * n..(view + 1) * n]
    }

    pub fn same_shape(&self, other: &ProjectionStack) -> bool {
        self.geometry.n_views() == other.geometry.n_views()
            && self.geometry.detector_rows == other.geometry.detector_rows
            && self.geometry.detector_cols == other.geometry.detector_cols
    }

    /// Keeps the listed views, preserving order.
    pub fn select_views(&self, views: &[usize]) -> Result<Self> {
        let geometry = self.geometry.select_views(views)?;
        let mut values = Vec::with_capacity(geometry.n_measurements());
        for &v in views {
            values.extend_from_slice(self.view(v));
        }
        Ok(Self {
            geometry,
            kind: self.kind,
            values,
        })
    }
}
