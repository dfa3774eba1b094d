//! qGGMRF pairwise prior.
//!
//! `s(f) = Σ_{j,k} w_jk ρ(f_j − f_k)` over unordered neighbor pairs, with
//! `ρ(Δ) = |Δ/σ|² / (c + |Δ/σ|^(2−p))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::VolumeGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Neighborhood {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "18")]
    Eighteen,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Neighborhood {
    /// Squared offset lengths included in the neighborhood.
    fn max_squared_distance(self) -> isize {
        match self {
            Neighborhood::Six => 1,
            Neighborhood::Eighteen => 2,
            Neighborhood::TwentySix => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub sigma_f: f64,
    pub c: f64,
    pub p: f64,
    #[serde(default)]
    pub neighborhood: Neighborhood,
}

impl PriorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::Parameter(format!("sigma_f must be positive, got {}", self.sigma_f)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Parameter(format!("c must be positive, got {}", self.c)));
        }
        if !(1.0..=2.0).contains(&self.p) {
            return Err(Error::Parameter(format!("p must lie in [1, 2], got {}", self.p)));
        }
        Ok(())
    }

    /// `σ_f = 2%` of the dynamic range, `c = 10⁻⁴·range²`, `p = 1.2`.
    pub fn from_dynamic_range(range: f64) -> Self {
        Self {
            sigma_f: 0.02 * range,
            c: 1e-4 * range * range,
            p: 1.2,
            neighborhood: Neighborhood::TwentySix,
        }
    }

    /// Upper bound on `ρ''`, attained at `Δ = 0`.
    ///
    /// `ρ'(Δ)/Δ = (2c + p·a)/(σ²(c + a)²)` with `a = |Δ/σ|^(2−p)` is
    /// decreasing in `a`, and `ρ'' ≤ ρ'(Δ)/Δ` wherever that ratio decreases,
    /// so `ρ'' ≤ 2/(cσ²)`.
    pub fn curvature_bound(&self) -> f64 {
        2.0 / (self.c * self.sigma_f * self.sigma_f)
    }
}

pub fn rho(delta: f64, params: &PriorParams) -> f64 {
    let x = (delta / params.sigma_f).abs();
    let a = x.powf(2.0 - params.p);
    x * x / (params.c + a)
}

/// `ρ'(Δ) = (Δ/σ²)·(2c + p·a)/(c + a)²` with `a = |Δ/σ|^(2−p)`.
pub fn rho_prime(delta: f64, params: &PriorParams) -> f64 {
    let s2 = params.sigma_f * params.sigma_f;
    let a = (delta / params.sigma_f).abs().powf(2.0 - params.p);
    let den = params.c + a;
    delta / s2 * (2.0 * params.c + params.p * a) / (den * den)
}

/// Inverse-distance neighbor weights normalized to sum to one over the
/// full neighborhood of an interior voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborWeights {
    /// One orientation of every pair: offsets that are lexicographically
    /// positive in `(dz, dy, dx)`.
    pub half: Vec<([isize; 3], f64)>,
}

impl NeighborWeights {
    pub fn new(neighborhood: Neighborhood) -> Self {
        let max = neighborhood.max_squared_distance();
        let mut full = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let d2 = dx * dx + dy * dy + dz * dz;
                    if d2 == 0 || d2 > max {
                        continue;
                    }
                    full.push(([dx, dy, dz], 1.0 / (d2 as f64).sqrt()));
                }
            }
        }
        let total: f64 = full.iter().map(|(_, w)| w).sum();
        let half = full
            .into_iter()
            .filter(|([dx, dy, dz], _)| (*dz, *dy, *dx) > (0, 0, 0))
            .map(|(o, w)| (o, w / total))
            .collect();
        Self { half }
    }

    /// Sum of the weights around an interior voxel (both orientations).
    pub fn total(&self) -> f64 {
        2.0 * self.half.iter().map(|(_, w)| w).sum::<f64>()
    }
}

/// Visits every in-grid unordered pair `(j, k, w_jk)` in a fixed order.
#[inline]
fn for_each_pair<F: FnMut(usize, usize, f64)>(grid: &VolumeGrid, weights: &NeighborWeights, mut f: F) {
    let (nx, ny, nz) = (grid.nx as isize, grid.ny as isize, grid.nz as isize);
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let j = ((iz * ny + iy) * nx + ix) as usize;
                for &([dx, dy, dz], w) in &weights.half {
                    let (kx, ky, kz) = (ix + dx, iy + dy, iz + dz);
                    if kx < 0 || ky < 0 || kz < 0 || kx >= nx || ky >= ny || kz >= nz {
                        continue;
                    }
                    f(j, ((kz * ny + ky) * nx + kx) as usize, w);
                }
            }
        }
    }
}

pub fn prior_cost(grid: &VolumeGrid, f: &[f64], params: &PriorParams, weights: &NeighborWeights) -> f64 {
    let mut sum = 0.0;
    for_each_pair(grid, weights, |j, k, w| sum += w * rho(f[j] - f[k], params));
    sum
}

/// Adds `∇s(f)` into `out`.
pub fn add_prior_gradient(
    grid: &VolumeGrid,
    f: &[f64],
    params: &PriorParams,
    weights: &NeighborWeights,
    out: &mut [f64],
) {
    for_each_pair(grid, weights, |j, k, w| {
        let g = w * rho_prime(f[j] - f[k], params);
        out[j] += g;
        out[k] -= g;
    });
}

pub fn prior_gradient(grid: &VolumeGrid, f: &[f64], params: &PriorParams, weights: &NeighborWeights) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    add_prior_gradient(grid, f, params, weights, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(p: f64) -> PriorParams {
        PriorParams { sigma_f: 1.0, c: 1.0, p, neighborhood: Neighborhood::TwentySix }
    }

    #[test]
    fn rho_examples() {
        let pr = params(1.2);
        assert_eq!(rho(0.0, &pr), 0.0);
        for p in [1.0, 1.3, 2.0] {
            let pr = PriorParams { sigma_f: 0.7, c: 0.3, p, ..params(p) };
            assert!((rho(0.7, &pr) - 1.0 / 1.3).abs() < 1e-15);
            assert!((rho(-0.7, &pr) - 1.0 / 1.3).abs() < 1e-15);
        }
        let expect = 4.0 / (1.0 + 2f64.powf(0.8));
        assert!((rho(2.0, &pr) - expect).abs() < 1e-15);
    }

    #[test]
    fn rho_prime_matches_central_difference() {
        let pr = params(1.2);
        let h = 1e-6;
        let fd = (rho(0.37 + h, &pr) - rho(0.37 - h, &pr)) / (2.0 * h);
        let an = rho_prime(0.37, &pr);
        assert!((fd - an).abs() / an.abs() < 1e-6, "{fd} {an}");
        assert_eq!(rho_prime(0.0, &pr), 0.0);
    }

    #[test]
    fn curvature_within_bound() {
        for p in [1.0, 1.2, 1.6, 2.0] {
            for c in [1e-3, 0.1, 1.0, 10.0] {
                let pr = PriorParams { sigma_f: 0.3, c, p, ..params(p) };
                let bound = pr.curvature_bound();
                for i in 0..2000 {
                    let d = 1e-4 + i as f64 * 2e-3;
                    let h = 1e-7 * (1.0 + d);
                    let second = (rho_prime(d + h, &pr) - rho_prime(d - h, &pr)) / (2.0 * h);
                    assert!(second <= bound * (1.0 + 1e-5), "p {p} c {c} d {d}: {second} > {bound}");
                    assert!(second >= -1e-6 * bound, "p {p} c {c} d {d}: {second}");
                }
            }
        }
    }

    #[test]
    fn weights_normalized_and_symmetric() {
        for (nb, pairs) in [(Neighborhood::Six, 3), (Neighborhood::Eighteen, 9), (Neighborhood::TwentySix, 13)] {
            let w = NeighborWeights::new(nb);
            assert_eq!(w.half.len(), pairs);
            assert!((w.total() - 1.0).abs() < 1e-15);
        }
        let w = NeighborWeights::new(Neighborhood::TwentySix);
        let face = w.half.iter().find(|(o, _)| *o == [1, 0, 0]).unwrap().1;
        let corner = w.half.iter().find(|(o, _)| *o == [1, 1, 1]).unwrap().1;
        assert!((face / corner - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_volume_has_zero_cost_and_gradient() {
        let grid = VolumeGrid::cubic(4, 1.0);
        let f = vec![2.5; grid.len()];
        let w = NeighborWeights::new(Neighborhood::TwentySix);
        let pr = params(1.2);
        assert_eq!(prior_cost(&grid, &f, &pr, &w), 0.0);
        assert!(prior_gradient(&grid, &f, &pr, &w).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_voxel_volume() {
        let grid = VolumeGrid { nx: 2, ny: 1, nz: 1, voxel_size: 1.0, center: [0.0; 3] };
        let w = NeighborWeights::new(Neighborhood::Six);
        let pr = params(1.5);
        let f = [0.3, -1.1];
        let got = prior_cost(&grid, &f, &pr, &w);
        assert!((got - w.half[0].1 * rho(1.4, &pr)).abs() < 1e-15);
    }

    #[test]
    fn brute_force_cost_5cubed() {
        let grid = VolumeGrid::cubic(5, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>() * 3.0).collect();
        let pr = PriorParams { sigma_f: 0.4, c: 0.05, p: 1.2, neighborhood: Neighborhood::TwentySix };
        let w = NeighborWeights::new(pr.neighborhood);
        // All ordered pairs over the full 26-neighborhood, halved.
        let total_inv: f64 = (-1i32..=1)
            .flat_map(|a| (-1i32..=1).flat_map(move |b| (-1i32..=1).map(move |c| (a, b, c))))
            .filter(|&(a, b, c)| (a, b, c) != (0, 0, 0))
            .map(|(a, b, c)| 1.0 / f64::from(a * a + b * b + c * c).sqrt())
            .sum();
        let mut brute = 0.0;
        for z in 0..5i32 {
            for y in 0..5i32 {
                for x in 0..5i32 {
                    for dz in -1..=1 {
                        for dy in -1..=1 {
                            for dx in -1..=1 {
                                let (u, v, s) = (x + dx, y + dy, z + dz);
                                if (dx, dy, dz) == (0, 0, 0) || !(0..5).contains(&u) || !(0..5).contains(&v) || !(0..5).contains(&s) {
                                    continue;
                                }
                                let wjk = 1.0 / f64::from(dx * dx + dy * dy + dz * dz).sqrt() / total_inv;
                                let j = ((z * 5 + y) * 5 + x) as usize;
                                let k = ((s * 5 + v) * 5 + u) as usize;
                                let d = (f[j] - f[k]) / pr.sigma_f;
                                brute += 0.5 * wjk * d * d / (pr.c + d.abs().powf(2.0 - pr.p));
                            }
                        }
                    }
                }
            }
        }
        let got = prior_cost(&grid, &f, &pr, &w);
        assert!((got - brute).abs() / brute < 1e-12, "{got} {brute}");
    }

    #[test]
    fn gradient_matches_finite_differences_4cubed() {
        let grid = VolumeGrid::cubic(4, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut f: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        let pr = PriorParams { sigma_f: 0.3, c: 0.2, p: 1.2, neighborhood: Neighborhood::TwentySix };
        let w = NeighborWeights::new(pr.neighborhood);
        let g = prior_gradient(&grid, &f, &pr, &w);
        let h = 1e-5 * pr.sigma_f;
        for j in 0..grid.len() {
            let x = f[j];
            f[j] = x + h;
            let up = prior_cost(&grid, &f, &pr, &w);
            f[j] = x - h;
            let dn = prior_cost(&grid, &f, &pr, &w);
            f[j] = x;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-8), "voxel {j}: {fd} vs {}", g[j]);
        }
        let sum: f64 = g.iter().sum();
        let scale: f64 = g.iter().map(|v| v.abs()).sum();
        assert!(sum.abs() < 1e-12 * scale, "{sum}");
    }

    #[test]
    fn invalid_params() {
        assert!(PriorParams { p: 0.9, ..params(1.0) }.validate().is_err());
        assert!(PriorParams { p: 2.1, ..params(1.0) }.validate().is_err());
        assert!(PriorParams { c: 0.0, ..params(1.0) }.validate().is_err());
        assert!(PriorParams { sigma_f: -1.0, ..params(1.0) }.validate().is_err());
        assert!(params(1.0).validate().is_ok());
    }
}
