//! Layered spherical phantoms that mimic coated fuel particles.
//!
//! A phantom is a stack of concentric shells. Shell `i` fills the ball of
//! radius `shells[i].outer_radius` minus the balls of the shells inside it,
//! so the innermost entry is the solid kernel. Spherical voids (defects)
//! reset their interior to the background attenuation.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{dot, sub, Ray, Vec3, Volume, VolumeGrid};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    /// mm
    pub outer_radius: f64,
    /// 1/mm
    pub attenuation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrisoPhantomSpec {
    #[serde(default)]
    pub center: Vec3,
    /// Innermost (kernel) first, radii strictly increasing.
    pub shells: Vec<ShellSpec>,
    #[serde(default)]
    pub background_attenuation: f64,
    #[serde(default)]
    pub defects: Vec<Defect>,
}

impl Default for TrisoPhantomSpec {
    /// Kernel, buffer, inner pyrolytic carbon, silicon carbide and outer
    /// pyrolytic carbon, 1 mm outer diameter. The kernel attenuates 50× the
    /// pyrolytic carbon layers. The values are illustrative, not measured.
    fn default() -> Self {
        let pyc = 0.8;
        Self {
            center: [0.0; 3],
            shells: alloc::vec![
                ShellSpec { outer_radius: 0.25, attenuation: 50.0 * pyc },
                ShellSpec { outer_radius: 0.35, attenuation: 0.5 },
                ShellSpec { outer_radius: 0.39, attenuation: pyc },
                ShellSpec { outer_radius: 0.45, attenuation: 1.2 },
                ShellSpec { outer_radius: 0.50, attenuation: pyc },
            ],
            background_attenuation: 0.0,
            defects: Vec::new(),
        }
    }
}

impl TrisoPhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shells.is_empty() {
            return Err(Error::Phantom("at least one shell is required".into()));
        }
        for (i, s) in self.shells.iter().enumerate() {
            if !(s.outer_radius > 0.0 && s.outer_radius.is_finite()) {
                return Err(Error::Phantom(format!("shell {i}: radius must be positive")));
            }
            if !(s.attenuation >= 0.0 && s.attenuation.is_finite()) {
                return Err(Error::Phantom(format!(
                    "shell {i}: attenuation must be nonnegative"
                )));
            }
        }
        if self
            .shells
            .windows(2)
            .any(|w| w[1].outer_radius <= w[0].outer_radius)
        {
            return Err(Error::Phantom("shell radii must be strictly increasing".into()));
        }
        if !(self.background_attenuation >= 0.0 && self.background_attenuation.is_finite()) {
            return Err(Error::Phantom("background attenuation must be nonnegative".into()));
        }
        let outer = self.outer_radius();
        for (i, d) in self.defects.iter().enumerate() {
            if !(d.radius > 0.0) {
                return Err(Error::Phantom(format!("defect {i}: radius must be positive")));
            }
            let off = dot(sub(d.center, self.center), sub(d.center, self.center)).sqrt();
            if off + d.radius > outer {
                return Err(Error::Phantom(format!(
                    "defect {i} extends outside the outermost shell"
                )));
            }
        }
        Ok(())
    }

    pub fn outer_radius(&self) -> f64 {
        self.shells.last().map_or(0.0, |s| s.outer_radius)
    }

    pub fn kernel_radius(&self) -> f64 {
        self.shells.first().map_or(0.0, |s| s.outer_radius)
    }

    /// Largest attenuation minus smallest, background included.
    pub fn dynamic_range(&self) -> f64 {
        let vals = self
            .shells
            .iter()
            .map(|s| s.attenuation)
            .chain(core::iter::once(self.background_attenuation));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    }

    /// Attenuation at a point.
    pub fn attenuation_at(&self, p: Vec3) -> f64 {
        let in_defect = self.defects.iter().any(|d| {
            let r = sub(p, d.center);
            dot(r, r) <= d.radius * d.radius
        });
        if in_defect {
            return self.background_attenuation;
        }
        let r = sub(p, self.center);
        let d2 = dot(r, r);
        self.shells
            .iter()
            .find(|s| d2 <= s.outer_radius * s.outer_radius)
            .map_or(self.background_attenuation, |s| s.attenuation)
    }
}

/// Classifies each voxel by its center point.
pub fn rasterize_phantom(spec: &TrisoPhantomSpec, grid: &VolumeGrid) -> Result<Volume> {
    spec.validate()?;
    grid.validate()?;
    let r = spec.outer_radius();
    let lo = grid.corner();
    let dims = grid.dims();
    for a in 0..3 {
        let hi = lo[a] + dims[a] as f64 * grid.voxel_size;
        if spec.center[a] - r < lo[a] || spec.center[a] + r > hi {
            return Err(Error::Phantom(format!(
                "outermost shell does not fit inside the grid along axis {a}"
            )));
        }
    }
    let mut vol = Volume::zeros(grid.clone());
    let plane = grid.nx * grid.ny;
    par::for_each_chunk_mut(&mut vol.values, plane, |iz, slab| {
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                slab[iy * grid.nx + ix] = spec.attenuation_at(grid.voxel_center(ix, iy, iz));
            }
        }
    });
    Ok(vol)
}

/// Parameter interval `[t0, t1] ∩ [0, 1]` where the segment is inside the ball.
fn chord(ray: &Ray, center: Vec3, radius: f64) -> Option<(f64, f64)> {
    let dd = dot(ray.direction, ray.direction);
    if dd == 0.0 {
        return None;
    }
    let oc = sub(ray.origin, center);
    let b = dot(oc, ray.direction) / dd;
    let c = (dot(oc, oc) - radius * radius) / dd;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let h = disc.sqrt();
    let (t0, t1) = ((-b - h).max(0.0), (-b + h).min(1.0));
    (t1 > t0).then_some((t0, t1))
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Exact line integral of the phantom along the segment.
///
/// The field is written as `background + Σᵢ (μᵢ − μᵢ₊₁)·1[ball i]` with
/// `μₙ = background`; each ball contributes its chord length times its
/// attenuation step, minus the parts covered by defects.
pub fn phantom_line_integral(spec: &TrisoPhantomSpec, ray: &Ray) -> f64 {
    let length = ray.length();
    if length == 0.0 {
        return 0.0;
    }

    let mut voids: Vec<(f64, f64)> = spec
        .defects
        .iter()
        .filter_map(|d| chord(ray, d.center, d.radius))
        .collect();
    voids.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(voids.len());
    for v in voids {
        match merged.last_mut() {
            Some(last) if v.0 <= last.1 => last.1 = last.1.max(v.1),
            _ => merged.push(v),
        }
    }

    let bg = spec.background_attenuation;
    let mut total = bg;
    for (i, shell) in spec.shells.iter().enumerate() {
        let outer = spec.shells.get(i + 1).map_or(bg, |s| s.attenuation);
        let step = shell.attenuation - outer;
        if let Some(c) = chord(ray, spec.center, shell.outer_radius) {
            let hidden: f64 = merged.iter().map(|&m| overlap(c, m)).sum();
            total += step * (c.1 - c.0 - hidden);
        }
    }
    total * length
}
