//! The four reconstruction pipelines compared on the same measured counts.
//!
//! | method             | counts before log | reconstruction                |
//! |--------------------|-------------------|-------------------------------|
//! | `fdk-naive`        | median filtered   | FDK                           |
//! | `fdk-clipped`      | filtered, clipped | FDK                           |
//! | `mbir-plain`       | median filtered   | OGM, weights = counts         |
//! | `mbir-thresholded` | median filtered   | OGM, weights below T zeroed   |
//!
//! Both MBIR variants start from the `fdk-clipped` volume unless the
//! solver asks for a zero start.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::fdk::{fdk_reconstruct, FdkParams};
use crate::geometry::{ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume, VolumeGrid};
use crate::mbir::{ogm_reconstruct, CostTrace, InitialEstimate, MbirProblem, PriorParams, SolverParams};
use crate::preproc::{
    apply_shift_correction, clip_counts, median_filter_stack, normalize_and_log, threshold_weights,
    weights_from_counts, WeightSet, DEFAULT_CLIP_FLOOR, DEFAULT_MEDIAN_WINDOW, DEFAULT_THRESHOLD,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FdkNaive,
    FdkClipped,
    MbirPlain,
    MbirThresholded,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FdkNaive, Method::FdkClipped, Method::MbirPlain, Method::MbirThresholded];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FdkNaive => "fdk-naive",
            Method::FdkClipped => "fdk-clipped",
            Method::MbirPlain => "mbir-plain",
            Method::MbirThresholded => "mbir-thresholded",
        }
    }

    pub fn is_mbir(self) -> bool {
        matches!(self, Method::MbirPlain | Method::MbirThresholded)
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocOptions {
    #[serde(default = "default_window")]
    pub median_window: usize,
    /// Counts below this get zero weight in `mbir-thresholded`.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Counts are raised to this floor in `fdk-clipped`.
    #[serde(default = "default_clip")]
    pub clip_floor: f64,
}

fn default_window() -> usize {
    DEFAULT_MEDIAN_WINDOW
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_clip() -> f64 {
    DEFAULT_CLIP_FLOOR
}

impl Default for PreprocOptions {
    fn default() -> Self {
        Self { median_window: default_window(), threshold: default_threshold(), clip_floor: default_clip() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconParams {
    #[serde(default)]
    pub fdk: FdkParams,
    pub prior: PriorParams,
    #[serde(default)]
    pub solver: SolverParams,
}

/// Log-normalized projections on the unshifted detector and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub projections: ProjectionStack,
    pub weights: WeightSet,
}

/// Recorded per-view shifts as integers.
pub fn integer_shifts(geometry: &ConeBeamGeometry) -> Result<Vec<[i32; 2]>> {
    (0..geometry.n_views())
        .map(|v| {
            let s = geometry.shift(v);
            let r = [libm::round(s[0]), libm::round(s[1])];
            if (s[0] - r[0]).abs() > 1e-9 || (s[1] - r[1]).abs() > 1e-9 {
                return Err(Error::Unsupported(format!("non-integer detector shift {s:?} in view {v}")));
            }
            Ok([r[0] as i32, r[1] as i32])
        })
        .collect()
}

/// Median filter, optional clip, log-normalize, undo shifts, derive
/// weights from the filtered shift-corrected counts and optionally
/// threshold them. Pixels vacated by the shift get weight zero.
pub fn prepare(
    counts: &ProjectionStack,
    open_beam: &ProjectionStack,
    options: &PreprocOptions,
    clip: bool,
    threshold: Option<f64>,
) -> Result<Prepared> {
    if counts.kind != ProjectionKind::Counts || open_beam.kind != ProjectionKind::Counts {
        return Err(Error::Data("pipeline input must be count stacks".into()));
    }
    let shifts = integer_shifts(&counts.geometry)?;
    let mut filtered = median_filter_stack(counts, options.median_window)?;
    let open = median_filter_stack(open_beam, options.median_window)?;
    if clip {
        filtered = clip_counts(&filtered, options.clip_floor)?;
    }
    let log = normalize_and_log(&filtered, &open)?;
    let corrected = apply_shift_correction(&log, &shifts)?;
    let counts_corrected = apply_shift_correction(&filtered, &shifts)?;
    let mut weights = weights_from_counts(&counts_corrected.projections)?;
    weights.mask(&corrected.valid)?;
    if let Some(t) = threshold {
        weights = threshold_weights(&weights, t)?;
    }
    Ok(Prepared { projections: corrected.projections, weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub method: Method,
    pub volume: Volume,
    /// MBIR only.
    pub trace: Option<CostTrace>,
    pub lipschitz: Option<f64>,
    pub threshold_used: Option<f64>,
    /// Fraction of measurements with zero weight (MBIR only).
    pub rejected_fraction: Option<f64>,
}

pub fn reconstruct(
    method: Method,
    counts: &ProjectionStack,
    open_beam: &ProjectionStack,
    grid: &VolumeGrid,
    options: &PreprocOptions,
    params: &ReconParams,
) -> Result<Reconstruction> {
    let fdk_of = |clip: bool| {
        let p = prepare(counts, open_beam, options, clip, None)?;
        fdk_reconstruct(&p.projections, &p.projections.geometry, &params.fdk, grid)
    };
    match method {
        Method::FdkNaive | Method::FdkClipped => {
            let volume = fdk_of(method == Method::FdkClipped)?;
            Ok(Reconstruction {
                method,
                volume,
                trace: None,
                lipschitz: None,
                threshold_used: None,
                rejected_fraction: None,
            })
        }
        Method::MbirPlain | Method::MbirThresholded => {
            let initial = match params.solver.initial {
                InitialEstimate::Fdk => fdk_of(true)?,
                InitialEstimate::Zero => Volume::zeros(grid.clone()),
            };
            let threshold = (method == Method::MbirThresholded).then_some(options.threshold);
            let prepared = prepare(counts, open_beam, options, false, threshold)?;
            let geometry = &prepared.projections.geometry;
            let problem = MbirProblem::new(
                geometry,
                grid,
                &prepared.projections.values,
                &prepared.weights,
                Some(params.prior),
            )?;
            let result = ogm_reconstruct(&problem, &params.solver, &initial)?;
            Ok(Reconstruction {
                method,
                volume: result.volume,
                trace: Some(result.trace),
                lipschitz: Some(result.lipschitz),
                threshold_used: prepared.weights.threshold_used,
                rejected_fraction: Some(prepared.weights.rejected_fraction()),
            })
        }
    }
}

/// Keeps every `stride`-th view starting at view 0.
pub fn subsample_views(stack: &ProjectionStack, stride: usize) -> Result<ProjectionStack> {
    let n = stack.n_views();
    if stride == 0 || n % stride != 0 {
        return Err(Error::Parameter(format!("view stride {stride} must divide the {n} views")));
    }
    let views: Vec<usize> = (0..n).step_by(stride).collect();
    stack.select_views(&views)
}
