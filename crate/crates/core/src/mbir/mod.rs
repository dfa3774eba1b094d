//! Model-based iterative reconstruction.
//!
//! Minimizes `c(f) = ½‖g − A f‖²_W + s(f)` where `W` is the diagonal
//! measurement weight, `A` the matched projector of [`crate::projector`] and
//! `s` the qGGMRF prior of [`prior`], using the optimized gradient method of
//! [`ogm`] with step `1/L` from [`lipschitz`].
//!
//! Measurements whose weight is exactly zero are skipped, so their data
//! values (even NaN) never enter the cost or the gradient.

pub mod lipschitz;
pub mod ogm;
pub mod prior;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{ConeBeamGeometry, Volume, VolumeGrid};
use crate::preproc::WeightSet;
use crate::projector::Projector;
use crate::{Error, Result};

pub use lipschitz::{estimate_lipschitz, LipschitzEstimate, LIPSCHITZ_FLOOR};
pub use ogm::{next_t, ogm_reconstruct, CostRecord, InitialEstimate, CostTrace, OgmResult, OgmState, SolverParams};
pub use prior::{Neighborhood, NeighborWeights, PriorParams};

/// Prior parameters together with their precomputed neighbor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub params: PriorParams,
    pub weights: NeighborWeights,
}

impl Prior {
    pub fn new(params: PriorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, weights: NeighborWeights::new(params.neighborhood) })
    }

    pub fn cost(&self, grid: &VolumeGrid, f: &[f64]) -> f64 {
        prior::prior_cost(grid, f, &self.params, &self.weights)
    }

    pub fn add_gradient(&self, grid: &VolumeGrid, f: &[f64], out: &mut [f64]) {
        prior::add_prior_gradient(grid, f, &self.params, &self.weights, out)
    }

    /// Lipschitz constant of `∇s`: the weighted graph Laplacian has
    /// spectral radius at most `2·Σ_k w_jk = 2`, times the curvature bound.
    pub fn lipschitz_bound(&self) -> f64 {
        2.0 * self.weights.total() * self.params.curvature_bound()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub data: f64,
    pub prior: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.prior
    }
}

/// Data, weights, projector and prior of one reconstruction problem.
#[derive(Debug, Clone)]
pub struct MbirProblem<'a> {
    projector: Projector,
    data: &'a [f64],
    weights: &'a [f64],
    prior: Option<Prior>,
}

impl<'a> MbirProblem<'a> {
    /// `data` is the log-normalized projection vector `g`. Entries with
    /// zero weight may hold anything; every other entry must be finite.
    pub fn new(
        geometry: &ConeBeamGeometry,
        grid: &VolumeGrid,
        data: &'a [f64],
        weights: &'a WeightSet,
        prior: Option<PriorParams>,
    ) -> Result<Self> {
        let projector = Projector::new(geometry, grid)?;
        let m = projector.n_measurements();
        if data.len() != m {
            return Err(Error::shape(m, data.len()));
        }
        if weights.values.len() != m {
            return Err(Error::shape(m, weights.values.len()));
        }
        weights.validate()?;
        if let Some(i) = (0..m).find(|&i| weights.values[i] != 0.0 && !data[i].is_finite()) {
            return Err(Error::Data(format!("measurement {i} has positive weight but value {}", data[i])));
        }
        let prior = prior.map(Prior::new).transpose()?;
        Ok(Self { projector, data, weights: &weights.values, prior })
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn grid(&self) -> &VolumeGrid {
        self.projector.grid()
    }

    pub fn prior(&self) -> Option<&Prior> {
        self.prior.as_ref()
    }

    pub fn weights(&self) -> &[f64] {
        self.weights
    }

    fn check_volume(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.projector.n_voxels() {
            return Err(Error::shape(self.projector.n_voxels(), f.len()));
        }
        Ok(())
    }

    /// Cost at `f`; when `gradient` is given it is overwritten with `∇c(f)`.
    pub fn evaluate(&self, f: &[f64], gradient: Option<&mut [f64]>) -> Result<CostBreakdown> {
        self.check_volume(f)?;
        let mut af = vec![0.0; self.projector.n_measurements()];
        self.projector.forward(f, &mut af)?;
        let mut data_cost = 0.0;
        // Reuse the projection buffer for the weighted residual W(g − Af).
        for ((a, &g), &w) in af.iter_mut().zip(self.data).zip(self.weights) {
            if w == 0.0 {
                *a = 0.0;
                continue;
            }
            let r = g - *a;
            data_cost += w * r * r;
            *a = w * r;
        }
        let grid = self.projector.grid();
        let prior_cost = self.prior.as_ref().map_or(0.0, |p| p.cost(grid, f));
        if let Some(grad) = gradient {
            if grad.len() != f.len() {
                return Err(Error::shape(f.len(), grad.len()));
            }
            self.projector.back(&af, grad)?;
            grad.iter_mut().for_each(|v| *v = -*v);
            if let Some(p) = &self.prior {
                p.add_gradient(grid, f, grad);
            }
        }
        Ok(CostBreakdown { data: 0.5 * data_cost, prior: prior_cost })
    }

    pub fn cost(&self, f: &[f64]) -> Result<CostBreakdown> {
        self.evaluate(f, None)
    }

    pub fn gradient(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; f.len()];
        self.evaluate(f, Some(&mut g))?;
        Ok(g)
    }
}

/// `½‖g − A f‖²_W`.
pub fn data_cost(f: &Volume, g: &[f64], weights: &WeightSet, geometry: &ConeBeamGeometry) -> Result<f64> {
    Ok(MbirProblem::new(geometry, &f.grid, g, weights, None)?.cost(&f.values)?.data)
}

pub fn total_cost(
    f: &Volume,
    g: &[f64],
    weights: &WeightSet,
    geometry: &ConeBeamGeometry,
    prior: &PriorParams,
) -> Result<f64> {
    Ok(MbirProblem::new(geometry, &f.grid, g, weights, Some(*prior))?.cost(&f.values)?.total())
}

/// `∇c(f) = −AᵀW(g − A f) + ∇s(f)`.
pub fn total_gradient(
    f: &Volume,
    g: &[f64],
    weights: &WeightSet,
    geometry: &ConeBeamGeometry,
    prior: &PriorParams,
) -> Result<Volume> {
    let problem = MbirProblem::new(geometry, &f.grid, g, weights, Some(*prior))?;
    Volume::from_values(f.grid.clone(), problem.gradient(&f.values)?)
}
