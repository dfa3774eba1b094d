//! Lipschitz constant of `∇c` for the OGM step size.
//!
//! The data term contributes `λ_max(AᵀWA)`. Power iteration from the
//! all-ones vector gives a Rayleigh-quotient estimate (a lower bound) and,
//! because `AᵀWA` has nonnegative entries, the Collatz–Wielandt ratio
//! `max_j (Mx)_j / x_j` over a positive iterate is an upper bound. The
//! upper bound is used for the step so that the step can never be too long.

use alloc::vec;

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{ConeBeamGeometry, VolumeGrid};
use crate::preproc::WeightSet;
use crate::projector::Projector;
use crate::{Error, Result};

use super::{Prior, PriorParams};

/// Returned when both terms vanish (all weights zero and no prior).
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

pub const POWER_ITERATIONS: usize = 50;
pub const POWER_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    /// Rayleigh quotient of the last power iterate.
    pub data_rayleigh: f64,
    /// Certified upper bound on `λ_max(AᵀWA)`.
    pub data_bound: f64,
    /// Bound on the Lipschitz constant of `∇s`.
    pub prior_bound: f64,
    pub iterations: usize,
}

impl LipschitzEstimate {
    pub fn total(&self) -> f64 {
        let l = self.data_bound + self.prior_bound;
        if l > 0.0 {
            l
        } else {
            LIPSCHITZ_FLOOR
        }
    }
}

pub(crate) fn estimate(projector: &Projector, weights: &[f64], prior: Option<&Prior>) -> Result<LipschitzEstimate> {
    let n = projector.n_voxels();
    let mut x = vec![1.0; n];
    let mut ax = vec![0.0; projector.n_measurements()];
    let mut y = vec![0.0; n];
    let mut rayleigh = 0.0;
    let mut bound = 0.0;
    let mut iterations = 0;
    for k in 0..POWER_ITERATIONS {
        iterations = k + 1;
        projector.forward(&x, &mut ax)?;
        for (a, &w) in ax.iter_mut().zip(weights) {
            *a *= w;
        }
        projector.back(&ax, &mut y)?;
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let next = xy / xx;
        bound = x
            .iter()
            .zip(&y)
            .filter(|(xi, _)| **xi > 0.0)
            .map(|(xi, yi)| yi / xi)
            .fold(0.0f64, f64::max);
        let yy = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let converged = k > 0 && (next - rayleigh).abs() <= POWER_TOLERANCE * next.abs();
        rayleigh = next;
        if yy == 0.0 || converged {
            break;
        }
        // Keep x strictly positive so the ratio bound stays defined; voxels
        // no ray touches have zero rows in AᵀWA and cannot raise λ_max.
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = if *yi > 0.0 { yi / yy } else { 0.0 };
        }
    }
    if !rayleigh.is_finite() || !bound.is_finite() {
        return Err(Error::Data("Lipschitz estimate is not finite".into()));
    }
    Ok(LipschitzEstimate {
        data_rayleigh: rayleigh,
        data_bound: bound.max(rayleigh),
        prior_bound: prior.map_or(0.0, Prior::lipschitz_bound),
        iterations,
    })
}

pub fn estimate_lipschitz(
    weights: &WeightSet,
    geometry: &ConeBeamGeometry,
    grid: &VolumeGrid,
    prior: Option<&PriorParams>,
) -> Result<LipschitzEstimate> {
    let projector = Projector::new(geometry, grid)?;
    if weights.values.len() != projector.n_measurements() {
        return Err(Error::shape(projector.n_measurements(), weights.values.len()));
    }
    weights.validate()?;
    let prior = prior.map(|p| Prior::new(*p)).transpose()?;
    estimate(&projector, &weights.values, prior.as_ref())
}
