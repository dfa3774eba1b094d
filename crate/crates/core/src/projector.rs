//! Ray-driven cone-beam projector pair.
//!
//! Every measurement is the line integral of the volume along the segment
//! from the source to the pixel center, computed from exact ray–voxel
//! intersection lengths (an incremental Siddon traversal). The back
//! projector replays the same traversal and scatters instead of gathering,
//! so it is the exact transpose of the forward projector.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{ConeBeamGeometry, ProjectionKind, ProjectionStack, Ray, Vec3, Volume, VolumeGrid};
use crate::{par, Error, Result};

/// Number of partial volumes the back projector accumulates into. Fixed so
/// the floating-point summation order never depends on the thread count.
const BACKPROJECT_BLOCKS: usize = 8;

/// Calls `visit(voxel_index, length_mm)` for every voxel the segment
/// crosses with a positive intersection length, in order along the ray.
pub fn trace_ray<F: FnMut(usize, f64)>(grid: &VolumeGrid, ray: &Ray, mut visit: F) {
    let corner = grid.corner();
    let dims = grid.dims();
    let inv_vs = 1.0 / grid.voxel_size;
    let length = ray.length();
    if length == 0.0 {
        return;
    }

    let p0: [f64; 3] = core::array::from_fn(|a| (ray.origin[a] - corner[a]) * inv_vs);
    let d: [f64; 3] = core::array::from_fn(|a| ray.direction[a] * inv_vs);

    let mut alpha_min = 0.0_f64;
    let mut alpha_max = 1.0_f64;
    for a in 0..3 {
        let n = dims[a] as f64;
        if d[a] == 0.0 {
            if p0[a] < 0.0 || p0[a] > n {
                return;
            }
        } else {
            let t0 = -p0[a] / d[a];
            let t1 = (n - p0[a]) / d[a];
            alpha_min = alpha_min.max(t0.min(t1));
            alpha_max = alpha_max.min(t0.max(t1));
        }
    }
    if alpha_min >= alpha_max {
        return;
    }

    let mut idx = [0isize; 3];
    let mut step = [0isize; 3];
    let mut next = [f64::INFINITY; 3];
    // Parametric distance between successive boundaries on each axis.
    let mut delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let n = dims[a] as isize;
        let p = p0[a] + alpha_min * d[a];
        let i = if d[a] < 0.0 {
            libm::ceil(p) as isize - 1
        } else {
            libm::floor(p) as isize
        };
        idx[a] = i.clamp(0, n - 1);
        if d[a] > 0.0 {
            step[a] = 1;
            next[a] = ((idx[a] + 1) as f64 - p0[a]) / d[a];
            delta[a] = 1.0 / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            next[a] = (idx[a] as f64 - p0[a]) / d[a];
            delta[a] = -1.0 / d[a];
        }
    }

    let n = [dims[0] as isize, dims[1] as isize, dims[2] as isize];
    let stride = [1isize, n[0], n[0] * n[1]];
    // Voxels left before leaving the grid along each axis.
    let mut remaining: [isize; 3] =
        core::array::from_fn(|a| if step[a] > 0 { n[a] - 1 - idx[a] } else { idx[a] });
    let mut linear = idx[2] * stride[2] + idx[1] * stride[1] + idx[0];
    let mut alpha = alpha_min;
    loop {
        let m = if next[0] <= next[1] && next[0] <= next[2] {
            0
        } else if next[1] <= next[2] {
            1
        } else {
            2
        };
        let end = next[m].min(alpha_max);
        let seg = (end - alpha) * length;
        if seg > 0.0 {
            visit(linear as usize, seg);
        }
        if end >= alpha_max || remaining[m] == 0 {
            break;
        }
        alpha = end;
        remaining[m] -= 1;
        linear += step[m] * stride[m];
        next[m] += delta[m];
    }
}

/// Line integral of `volume` along `ray`.
pub fn project_ray(volume: &Volume, ray: &Ray) -> f64 {
    let mut sum = 0.0;
    trace_ray(&volume.grid, ray, |i, len| sum += volume.values[i] * len);
    sum
}

/// Validated geometry/grid pair with per-view source positions cached.
#[derive(Debug, Clone)]
pub struct Projector {
    geometry: ConeBeamGeometry,
    grid: VolumeGrid,
    sources: Vec<Vec3>,
}

impl Projector {
    pub fn new(geometry: &ConeBeamGeometry, grid: &VolumeGrid) -> Result<Self> {
        geometry.check_grid(grid)?;
        let sources = (0..geometry.n_views())
            .map(|v| geometry.source_position(v))
            .collect();
        Ok(Self {
            geometry: geometry.clone(),
            grid: grid.clone(),
            sources,
        })
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn n_measurements(&self) -> usize {
        self.geometry.n_measurements()
    }

    pub fn n_voxels(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    fn ray(&self, view: usize, row: usize, col: usize) -> Ray {
        Ray::between(self.sources[view], self.geometry.pixel_position(view, row, col))
    }

    /// `out = A·values`.
    pub fn forward(&self, values: &[f64], out: &mut [f64]) -> Result<()> {
        if values.len() != self.n_voxels() {
            return Err(Error::shape(self.n_voxels(), values.len()));
        }
        if out.len() != self.n_measurements() {
            return Err(Error::shape(self.n_measurements(), out.len()));
        }
        let rows = self.geometry.detector_rows;
        let cols = self.geometry.detector_cols;
        par::for_each_chunk_mut(out, rows * cols, |view, img| {
            for row in 0..rows {
                for col in 0..cols {
                    let ray = self.ray(view, row, col);
                    let mut sum = 0.0;
                    trace_ray(&self.grid, &ray, |i, len| sum += values[i] * len);
                    img[row * cols + col] = sum;
                }
            }
        });
        Ok(())
    }

    /// `out = Aᵀ·data`.
    pub fn back(&self, data: &[f64], out: &mut [f64]) -> Result<()> {
        if data.len() != self.n_measurements() {
            return Err(Error::shape(self.n_measurements(), data.len()));
        }
        if out.len() != self.n_voxels() {
            return Err(Error::shape(self.n_voxels(), out.len()));
        }
        let n_views = self.geometry.n_views();
        let rows = self.geometry.detector_rows;
        let cols = self.geometry.detector_cols;
        let blocks = BACKPROJECT_BLOCKS.min(n_views);
        let partials = par::map_range(blocks, |b| {
            let mut acc = vec![0.0; self.n_voxels()];
            let (start, end) = (b * n_views / blocks, (b + 1) * n_views / blocks);
            for view in start..end {
                let img = &data[view * rows * cols..(view + 1) * rows * cols];
                for row in 0..rows {
                    for col in 0..cols {
                        let g = img[row * cols + col];
                        if g == 0.0 {
                            continue;
                        }
                        let ray = self.ray(view, row, col);
                        trace_ray(&self.grid, &ray, |i, len| acc[i] += g * len);
                    }
                }
            }
            acc
        });
        out.iter_mut().for_each(|o| *o = 0.0);
        for p in &partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        Ok(())
    }
}

/// Line integrals `A·f` for every pixel of every view.
pub fn forward_project(volume: &Volume, geometry: &ConeBeamGeometry) -> Result<ProjectionStack> {
    volume.validate()?;
    let projector = Projector::new(geometry, &volume.grid)?;
    let mut out = ProjectionStack::zeros(geometry.clone(), ProjectionKind::LogNormalized);
    projector.forward(&volume.values, &mut out.values)?;
    Ok(out)
}

/// Exact transpose of [`forward_project`].
pub fn back_project(
    projections: &ProjectionStack,
    geometry: &ConeBeamGeometry,
    grid: &VolumeGrid,
) -> Result<Volume> {
    if projections.values.len() != geometry.n_measurements() {
        return Err(Error::shape(geometry.n_measurements(), projections.values.len()));
    }
    let projector = Projector::new(geometry, grid)?;
    let mut out = Volume::zeros(grid.clone());
    projector.back(&projections.values, &mut out.values)?;
    Ok(out)
}
