//! Image-quality metrics on reconstructed volumes.
//!
//! NRMSE is normalized by the reference L2 norm over the mask:
//! `‖(x − ref)·m‖ / ‖ref·m‖`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{Vec3, Volume, VolumeGrid};
use crate::{Error, Result};

/// Boolean voxel mask on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub grid: VolumeGrid,
    pub inside: Vec<bool>,
}

impl RegionMask {
    pub fn new(grid: VolumeGrid, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != grid.len() {
            return Err(Error::shape(grid.len(), inside.len()));
        }
        Ok(Self { grid, inside })
    }

    pub fn all(grid: &VolumeGrid) -> Self {
        Self { grid: grid.clone(), inside: alloc::vec![true; grid.len()] }
    }

    fn from_predicate(grid: &VolumeGrid, keep: impl Fn(Vec3) -> bool) -> Self {
        let inside = (0..grid.len())
            .map(|i| {
                let [ix, iy, iz] = grid.coords(i);
                keep(grid.voxel_center(ix, iy, iz))
            })
            .collect();
        Self { grid: grid.clone(), inside }
    }

    /// Voxels inside a z-aligned cylinder of `radius` around `center`
    /// whose |z − center_z| ≤ `half_height`, minus any voxel within
    /// `exclude_radius` of `center`.
    pub fn interior_cylinder(grid: &VolumeGrid, center: Vec3, radius: f64, half_height: f64, exclude_radius: f64) -> Self {
        Self::from_predicate(grid, |p| {
            let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
            dx * dx + dy * dy <= radius * radius
                && dz.abs() <= half_height
                && dx * dx + dy * dy + dz * dz > exclude_radius * exclude_radius
        })
    }

    /// Voxels whose centers satisfy `inner < |p − center| < outer`.
    pub fn spherical_shell(grid: &VolumeGrid, center: Vec3, inner: f64, outer: f64) -> Self {
        Self::from_predicate(grid, |p| {
            let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + (p[2] - center[2]).powi(2)).sqrt();
            d > inner && d < outer
        })
    }

    pub fn ball(grid: &VolumeGrid, center: Vec3, radius: f64) -> Self {
        Self::spherical_shell(grid, center, -1.0, radius)
    }

    pub fn intersect(&self, other: &RegionMask) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Grid("masks are on different grids".into()));
        }
        let inside = self.inside.iter().zip(&other.inside).map(|(a, b)| *a && *b).collect();
        Ok(Self { grid: self.grid.clone(), inside })
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    fn check(&self, volume: &Volume) -> Result<()> {
        if volume.grid != self.grid {
            return Err(Error::Grid("volume and mask grids differ".into()));
        }
        if self.count() == 0 {
            return Err(Error::Parameter("mask selects no voxels".into()));
        }
        Ok(())
    }
}

pub fn nrmse(x: &Volume, reference: &Volume, mask: &RegionMask) -> Result<f64> {
    mask.check(x)?;
    mask.check(reference)?;
    let (mut err, mut norm) = (0.0, 0.0);
    for ((a, b), &m) in x.values.iter().zip(&reference.values).zip(&mask.inside) {
        if m {
            err += (a - b) * (a - b);
            norm += b * b;
        }
    }
    if norm == 0.0 {
        return Err(Error::Data("reference has zero norm over the mask".into()));
    }
    Ok((err / norm).sqrt())
}

/// Mean and population standard deviation over the mask.
pub fn region_stats(x: &Volume, mask: &RegionMask) -> Result<(f64, f64)> {
    mask.check(x)?;
    let n = mask.count() as f64;
    let mean = x.values.iter().zip(&mask.inside).filter(|(_, m)| **m).map(|(v, _)| v).sum::<f64>() / n;
    let var = x
        .values
        .iter()
        .zip(&mask.inside)
        .filter(|(_, m)| **m)
        .map(|(v, _)| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}

pub fn region_stddev(x: &Volume, mask: &RegionMask) -> Result<f64> {
    region_stats(x, mask).map(|(_, s)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    /// Distance from the start voxel center, mm.
    pub position: f64,
    pub index: [usize; 3],
    pub value: f64,
}

/// Values along the 3D Bresenham line between two voxel indices, inclusive.
pub fn line_profile(x: &Volume, start: [usize; 3], end: [usize; 3]) -> Result<Vec<ProfileSample>> {
    let dims = x.grid.dims();
    for p in [start, end] {
        if (0..3).any(|a| p[a] >= dims[a]) {
            return Err(Error::Parameter(format!("profile endpoint {p:?} outside grid {dims:?}")));
        }
    }
    let s = start.map(|v| v as i64);
    let e = end.map(|v| v as i64);
    let d: [i64; 3] = core::array::from_fn(|a| (e[a] - s[a]).abs());
    let step: [i64; 3] = core::array::from_fn(|a| (e[a] - s[a]).signum());
    let major = (0..3).max_by_key(|&a| (d[a], core::cmp::Reverse(a))).unwrap_or(0);
    let n = d[major];
    let mut p = s;
    let mut err = [0i64; 3];
    let mut out = Vec::with_capacity(n as usize + 1);
    let vs = x.grid.voxel_size;
    for i in 0..=n {
        let idx = p.map(|v| v as usize);
        let dist = ((0..3).map(|a| ((p[a] - s[a]) as f64).powi(2)).sum::<f64>()).sqrt() * vs;
        out.push(ProfileSample { position: dist, index: idx, value: x.get(idx[0], idx[1], idx[2]) });
        if i == n {
            break;
        }
        p[major] += step[major];
        for a in 0..3 {
            if a == major {
                continue;
            }
            err[a] += 2 * d[a];
            if err[a] > n {
                p[a] += step[a];
                err[a] -= 2 * n;
            }
        }
    }
    Ok(out)
}
