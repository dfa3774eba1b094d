//! Optimized gradient method.
//!
//! With `t₀ = 1` and `h₀ = f₀`, each iteration computes
//!
//! ```text
//! h_{k+1} = f_k − ∇c(f_k)/L
//! t_{k+1} = (1 + √(1 + 4t_k²))/2
//! f_{k+1} = h_{k+1} + ((t_k − 1)/t_{k+1})(h_{k+1} − h_k) + (t_k/t_{k+1})(h_{k+1} − f_k)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::Volume;
use crate::{Error, Result};

use super::lipschitz::{self, LipschitzEstimate};
use super::{CostBreakdown, MbirProblem};

/// Starting volume used by the reconstruction pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialEstimate {
    Zero,
    /// The `fdk-clipped` reconstruction of the same counts.
    #[default]
    Fdk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// Fixed step constant; estimated from the problem when absent.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    /// Record the cost every this many iterations (and at the end).
    #[serde(default = "default_log_interval")]
    pub cost_log_interval: usize,
    #[serde(default)]
    pub initial: InitialEstimate,
}

fn default_iterations() -> usize {
    200
}

fn default_log_interval() -> usize {
    10
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iterations: default_iterations(),
            lipschitz: None,
            cost_log_interval: default_log_interval(),
            initial: InitialEstimate::Fdk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub iteration: usize,
    pub data: f64,
    pub prior: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostTrace {
    pub records: Vec<CostRecord>,
}

impl CostTrace {
    fn push(&mut self, iteration: usize, cost: CostBreakdown) {
        self.records.push(CostRecord {
            iteration,
            data: cost.data,
            prior: cost.prior,
            total: cost.total(),
        });
    }

    fn last_finite(&self) -> Option<f64> {
        self.records.iter().rev().map(|r| r.total).find(|t| t.is_finite())
    }
}

/// `t_{k+1}` from `t_k`.
pub fn next_t(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

/// Iterate state; `f` is the current estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct OgmState {
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub t: f64,
    pub iteration: usize,
    grad: Vec<f64>,
}

impl OgmState {
    pub fn new(f0: Vec<f64>) -> Self {
        let n = f0.len();
        Self { h: f0.clone(), f: f0, t: 1.0, iteration: 0, grad: vec![0.0; n] }
    }

    /// One OGM update with step `1/lipschitz`; returns the cost at the
    /// estimate the gradient was taken at.
    pub fn step(&mut self, problem: &MbirProblem<'_>, lipschitz: f64) -> Result<CostBreakdown> {
        let cost = problem.evaluate(&self.f, Some(&mut self.grad))?;
        let t_next = next_t(self.t);
        let momentum = (self.t - 1.0) / t_next;
        let over = self.t / t_next;
        let inv_l = 1.0 / lipschitz;
        for j in 0..self.f.len() {
            let h_next = self.f[j] - self.grad[j] * inv_l;
            let f_next = h_next + momentum * (h_next - self.h[j]) + over * (h_next - self.f[j]);
            self.h[j] = h_next;
            self.f[j] = f_next;
        }
        self.t = t_next;
        self.iteration += 1;
        Ok(cost)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OgmResult {
    pub volume: Volume,
    pub trace: CostTrace,
    pub lipschitz: f64,
    /// Present when the constant was estimated rather than supplied.
    pub lipschitz_estimate: Option<LipschitzEstimate>,
    pub iterations: usize,
}

/// Runs `solver.max_iterations` OGM iterations from `initial`.
///
/// The trace holds the cost of `f_k` for every `k` that is a multiple of the
/// log interval, plus the final estimate. A non-finite cost aborts with
/// [`Error::NonFiniteCost`].
pub fn ogm_reconstruct(problem: &MbirProblem<'_>, solver: &SolverParams, initial: &Volume) -> Result<OgmResult> {
    if initial.grid != *problem.grid() {
        return Err(Error::Grid("initial estimate grid differs from the problem grid".into()));
    }
    initial.validate()?;
    let (lipschitz, lipschitz_estimate) = match solver.lipschitz {
        Some(l) if l > 0.0 && l.is_finite() => (l, None),
        Some(l) => return Err(Error::Parameter(alloc::format!("Lipschitz constant must be positive, got {l}"))),
        None => {
            let est = lipschitz::estimate(problem.projector(), problem.weights(), problem.prior())?;
            (est.total(), Some(est))
        }
    };
    let interval = solver.cost_log_interval.max(1);
    let mut state = OgmState::new(initial.values.clone());
    let mut trace = CostTrace::default();
    let check = |k: usize, cost: CostBreakdown, trace: &CostTrace| -> Result<()> {
        if cost.total().is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteCost { iteration: k, last_finite_cost: trace.last_finite().unwrap_or(f64::NAN) })
        }
    };
    for k in 0..solver.max_iterations {
        let cost = state.step(problem, lipschitz)?;
        check(k, cost, &trace)?;
        if k % interval == 0 {
            trace.push(k, cost);
        }
    }
    let final_cost = problem.cost(&state.f)?;
    check(solver.max_iterations, final_cost, &trace)?;
    trace.push(solver.max_iterations, final_cost);
    Ok(OgmResult {
        volume: Volume::from_values(initial.grid.clone(), state.f)?,
        trace,
        lipschitz,
        lipschitz_estimate,
        iterations: solver.max_iterations,
    })
}
