//! Feldkamp–Davis–Kress reconstruction for a full circular orbit.
//!
//! Steps: cosine pre-weighting, row-wise ramp filtering on a virtual
//! detector through the isocenter, then distance-weighted voxel-driven
//! backprojection with bilinear interpolation, scaled by the angular step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume, VolumeGrid};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    #[default]
    RamLak,
    HannApodized,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FdkParams {
    #[serde(default)]
    pub filter: FilterKind,
    /// Parker weighting is not implemented; setting this is an error.
    #[serde(default)]
    pub short_scan_weighting: bool,
}

/// Band-limited ramp filter for rows of `width` samples spaced `spacing` mm.
///
/// The spatial Ram-Lak kernel is sampled on a zero-padded circular buffer of
/// length `≥ 2·width`, so circular convolution equals linear convolution on
/// the row.
#[derive(Clone)]
pub struct RampFilter {
    width: usize,
    padded: usize,
    spacing: f64,
    /// Real, even frequency response (includes any apodization).
    #[cfg_attr(not(feature = "std"), allow(dead_code))]
    response: Vec<f64>,
    /// Circular spatial kernel with the response above.
    kernel: Vec<f64>,
    #[cfg(feature = "std")]
    fft: (
        std::sync::Arc<dyn rustfft::Fft<f64>>,
        std::sync::Arc<dyn rustfft::Fft<f64>>,
    ),
}

impl core::fmt::Debug for RampFilter {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RampFilter")
            .field("width", &self.width)
            .field("padded", &self.padded)
            .field("spacing", &self.spacing)
            .finish()
    }
}

/// Ram-Lak kernel value at integer lag `n` for unit spacing.
fn ram_lak(n: isize) -> f64 {
    if n == 0 {
        0.25
    } else if n % 2 == 0 {
        0.0
    } else {
        -1.0 / (PI * PI * (n * n) as f64)
    }
}

/// Cosine transform of an even circular sequence: `Σₙ x[n]·cos(2πkn/M)`.
fn even_dft(x: &[f64]) -> Vec<f64> {
    let m = x.len();
    (0..m)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, v)| v * libm::cos(TAU * ((k * n) % m) as f64 / m as f64))
                .sum()
        })
        .collect()
}

impl RampFilter {
    pub fn new(width: usize, spacing: f64, kind: FilterKind) -> Self {
        let padded = (2 * width).next_power_of_two().max(2);
        let lag = |i: usize| -> isize {
            if i <= padded / 2 {
                i as isize
            } else {
                i as isize - padded as isize
            }
        };
        let base: Vec<f64> = (0..padded).map(|i| ram_lak(lag(i))).collect();
        let mut response = even_dft(&base);
        let kernel = match kind {
            FilterKind::RamLak => base,
            FilterKind::HannApodized => {
                for (k, r) in response.iter_mut().enumerate() {
                    let f = lag(k) as f64 / padded as f64;
                    *r *= 0.5 * (1.0 + libm::cos(TAU * f));
                }
                even_dft(&response)
                    .into_iter()
                    .map(|v| v / padded as f64)
                    .collect()
            }
        };
        Self {
            width,
            padded,
            spacing,
            response,
            kernel,
            #[cfg(feature = "std")]
            fft: {
                let mut planner = rustfft::FftPlanner::new();
                (planner.plan_fft_forward(padded), planner.plan_fft_inverse(padded))
            },
        }
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    /// Linear convolution with the spatial kernel, `O(width²)`.
    pub fn apply_direct(&self, row: &[f64], out: &mut [f64]) {
        debug_assert_eq!(row.len(), self.width);
        let inv = 1.0 / self.spacing;
        for (n, o) in out.iter_mut().enumerate().take(self.width) {
            let mut acc = 0.0;
            for (m, &p) in row.iter().enumerate() {
                let lag = (n as isize - m as isize).rem_euclid(self.padded as isize) as usize;
                acc += p * self.kernel[lag];
            }
            *o = acc * inv;
        }
    }

    /// Filters one row. Uses the FFT when built with `std`.
    pub fn apply(&self, row: &[f64], out: &mut [f64]) {
        #[cfg(feature = "std")]
        {
            use rustfft::num_complex::Complex;
            let mut buf: Vec<Complex<f64>> = row
                .iter()
                .map(|&v| Complex::new(v, 0.0))
                .chain(core::iter::repeat(Complex::new(0.0, 0.0)))
                .take(self.padded)
                .collect();
            self.fft.0.process(&mut buf);
            for (b, r) in buf.iter_mut().zip(&self.response) {
                *b *= *r;
            }
            self.fft.1.process(&mut buf);
            let scale = 1.0 / (self.padded as f64 * self.spacing);
            for (o, b) in out.iter_mut().zip(&buf).take(self.width) {
                *o = b.re * scale;
            }
        }
        #[cfg(not(feature = "std"))]
        self.apply_direct(row, out);
    }
}

fn check_uniform_full_scan(angles: &[f64]) -> Result<f64> {
    if angles.len() < 2 {
        return Err(Error::Parameter("FDK needs at least 2 views".into()));
    }
    let step = TAU / angles.len() as f64;
    let tol = 1e-6 * step;
    for w in angles.windows(2) {
        if ((w[1] - w[0]) - step).abs() > tol {
            return Err(Error::Unsupported(format!(
                "FDK needs uniformly spaced views over 2π (expected step {step}, found {})",
                w[1] - w[0]
            )));
        }
    }
    Ok(step)
}

/// True for voxels inside the cylinder every view sees.
pub fn scanned_cylinder(grid: &VolumeGrid, geometry: &ConeBeamGeometry) -> Vec<bool> {
    let r2 = geometry.fov_radius().powi(2);
    (0..grid.len())
        .map(|i| {
            let [ix, iy, iz] = grid.coords(i);
            let p = grid.voxel_center(ix, iy, iz);
            p[0] * p[0] + p[1] * p[1] <= r2
        })
        .collect()
}

pub fn fdk_reconstruct(
    projections: &ProjectionStack,
    geometry: &ConeBeamGeometry,
    params: &FdkParams,
    grid: &VolumeGrid,
) -> Result<Volume> {
    if projections.kind != ProjectionKind::LogNormalized {
        return Err(Error::Data("FDK needs log-normalized projections".into()));
    }
    if params.short_scan_weighting {
        return Err(Error::Unsupported("short-scan weighting".into()));
    }
    geometry.check_grid(grid)?;
    if projections.values.len() != geometry.n_measurements() {
        return Err(Error::shape(geometry.n_measurements(), projections.values.len()));
    }
    let d_beta = check_uniform_full_scan(&geometry.view_angles)?;
    if let Some(i) = projections.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("projection value {i} is not finite")));
    }

    let r = geometry.source_to_axis_distance;
    let d = geometry.source_to_detector_distance;
    let (rows, cols) = (geometry.detector_rows, geometry.detector_cols);
    let pitch = geometry.detector_pixel_pitch;
    // Virtual detector through the isocenter.
    let iso_pitch = pitch * r / d;
    let filter = RampFilter::new(cols, iso_pitch, params.filter);

    let mut filtered = vec![0.0; projections.values.len()];
    par::for_each_chunk_mut(&mut filtered, rows * cols, |view, out| {
        let src = projections.view(view);
        let mut row_buf = vec![0.0; cols];
        for row in 0..rows {
            for col in 0..cols {
                let (u, v) = geometry.pixel_uv(view, row, col);
                let (a, b) = (u * r / d, v * r / d);
                row_buf[col] = src[row * cols + col] * r / (r * r + a * a + b * b).sqrt();
            }
            filter.apply(&row_buf, &mut out[row * cols..(row + 1) * cols]);
        }
    });

    let trig: Vec<(f64, f64)> = geometry.view_angles.iter().map(|&b| libm::sincos(b)).collect();
    let fov = scanned_cylinder(grid, geometry);
    let mut vol = Volume::zeros(grid.clone());
    let plane = grid.nx * grid.ny;
    let c0 = 0.5 * (cols as f64 - 1.0);
    let r0 = 0.5 * (rows as f64 - 1.0);
    par::for_each_chunk_mut(&mut vol.values, plane, |iz, slab| {
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                if !fov[grid.index(ix, iy, iz)] {
                    continue;
                }
                let [x, y, z] = grid.voxel_center(ix, iy, iz);
                let mut acc = 0.0;
                for (view, &(s, c)) in trig.iter().enumerate() {
                    let depth = r - (x * c + y * s);
                    let mag = d / depth;
                    let u = (-x * s + y * c) * mag;
                    let v = z * mag;
                    let [sr, sc] = geometry.shift(view);
                    let fc = u / pitch + c0 + sc;
                    let fr = v / pitch + r0 + sr;
                    let val = bilinear(&filtered[view * rows * cols..(view + 1) * rows * cols], rows, cols, fr, fc);
                    acc += val * (r * r) / (depth * depth);
                }
                slab[iy * grid.nx + ix] = 0.5 * d_beta * acc;
            }
        }
    });
    Ok(vol)
}

/// Bilinear sample with zero outside the image.
fn bilinear(img: &[f64], rows: usize, cols: usize, fr: f64, fc: f64) -> f64 {
    let r0 = libm::floor(fr);
    let c0 = libm::floor(fc);
    let (tr, tc) = (fr - r0, fc - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            img[r as usize * cols + c as usize]
        }
    };
    (1.0 - tr) * ((1.0 - tc) * at(r0, c0) + tc * at(r0, c0 + 1))
        + tr * ((1.0 - tc) * at(r0 + 1, c0) + tc * at(r0 + 1, c0 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fft_and_direct_filters_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [FilterKind::RamLak, FilterKind::HannApodized] {
            let f = RampFilter::new(37, 0.05, kind);
            assert!(f.padded_len() >= 74);
            let row: Vec<f64> = (0..37).map(|_| rng.random::<f64>()).collect();
            let (mut a, mut b) = (vec![0.0; 37], vec![0.0; 37]);
            f.apply(&row, &mut a);
            f.apply_direct(&row, &mut b);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "{kind:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn ramp_has_zero_dc_response() {
        let f = RampFilter::new(32, 1.0, FilterKind::RamLak);
        let sum: f64 = f.kernel.iter().sum();
        // Truncation leaves a small residual of order 1/width.
        assert!(sum.abs() < 0.01, "{sum}");
        let h = RampFilter::new(32, 1.0, FilterKind::HannApodized);
        assert!(h.response[0].abs() < 0.01);
        assert!(h.response[32].abs() < 1e-12);
    }

    #[test]
    fn zero_projections_give_zero_volume() {
        let g = ConeBeamGeometry::circular(20.0, 60.0, 16, 16, 0.2, 12);
        let p = ProjectionStack::zeros(g.clone(), ProjectionKind::LogNormalized);
        let v = fdk_reconstruct(&p, &g, &FdkParams::default(), &VolumeGrid::cubic(8, 0.1)).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_in_data() {
        let g = ConeBeamGeometry::circular(20.0, 60.0, 12, 12, 0.3, 10);
        let grid = VolumeGrid::cubic(8, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mk = |rng: &mut ChaCha8Rng| {
            ProjectionStack::new(
                g.clone(),
                ProjectionKind::LogNormalized,
                (0..g.n_measurements()).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let mut sum = a.clone();
        sum.values.iter_mut().zip(&b.values).for_each(|(s, v)| *s += v);
        let p = FdkParams::default();
        let fa = fdk_reconstruct(&a, &g, &p, &grid).unwrap();
        let fb = fdk_reconstruct(&b, &g, &p, &grid).unwrap();
        let fs = fdk_reconstruct(&sum, &g, &p, &grid).unwrap();
        let scale = fs.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..grid.len() {
            assert!((fa.values[i] + fb.values[i] - fs.values[i]).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = ConeBeamGeometry::circular(20.0, 60.0, 4, 4, 0.3, 1);
        let grid = VolumeGrid::cubic(4, 0.1);
        let p = ProjectionStack::zeros(g.clone(), ProjectionKind::LogNormalized);
        assert!(fdk_reconstruct(&p, &g, &FdkParams::default(), &grid).is_err());

        let mut g = ConeBeamGeometry::circular(20.0, 60.0, 4, 4, 0.3, 8);
        g.view_angles[3] += 0.01;
        let p = ProjectionStack::zeros(g.clone(), ProjectionKind::LogNormalized);
        assert!(matches!(
            fdk_reconstruct(&p, &g, &FdkParams::default(), &grid),
            Err(Error::Unsupported(_))
        ));

        let g = ConeBeamGeometry::circular(20.0, 60.0, 4, 4, 0.3, 8);
        let counts = ProjectionStack::zeros(g.clone(), ProjectionKind::Counts);
        assert!(fdk_reconstruct(&counts, &g, &FdkParams::default(), &grid).is_err());
        let p = ProjectionStack::zeros(g.clone(), ProjectionKind::LogNormalized);
        let short = FdkParams { short_scan_weighting: true, ..Default::default() };
        assert!(fdk_reconstruct(&p, &g, &short, &grid).is_err());
    }
}
