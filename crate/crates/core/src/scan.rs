//! Raw count simulation: Beer–Lambert transmission, Poisson noise, impulse
//! strikes and per-view detector shifts.
//!
//! Random numbers come from ChaCha8 with one stream per view, so a view's
//! samples depend only on the seed and the view index, never on scheduling.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume};
use crate::projector::Projector;
use crate::{par, Error, Result};

/// Above this mean the Poisson draw is replaced by a rounded Gaussian with
/// the same mean and variance.
pub const GAUSSIAN_APPROX_THRESHOLD: f64 = 1e6;

const TAG_COUNTS: u64 = 0x636f_756e_7473_0001;
const TAG_COUNTS_IMPULSE: u64 = 0x636f_756e_7473_0002;
const TAG_OPEN: u64 = 0x6f70_656e_0000_0001;
const TAG_OPEN_IMPULSE: u64 = 0x6f70_656e_0000_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    /// Expected photons per pixel per view without a sample.
    pub incident_counts: f64,
    pub rng_seed: u64,
    /// Probability that a pixel in a view is hit by a strike.
    #[serde(default)]
    pub impulse_rate: f64,
    #[serde(default)]
    pub impulse_amplitude: f64,
    #[serde(default = "default_true")]
    pub enable_poisson: bool,
    /// Integer `(row, col)` detector shifts, cycled over the views. Empty
    /// keeps whatever shifts the geometry already carries.
    #[serde(default)]
    pub shift_pattern: Vec<[i32; 2]>,
}

fn default_true() -> bool {
    true
}

impl AcquisitionParams {
    pub fn new(incident_counts: f64, rng_seed: u64) -> Self {
        Self {
            incident_counts,
            rng_seed,
            impulse_rate: 0.0,
            impulse_amplitude: 0.0,
            enable_poisson: true,
            shift_pattern: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.incident_counts > 0.0 && self.incident_counts.is_finite()) {
            return Err(Error::Parameter("incident_counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.impulse_rate) {
            return Err(Error::Parameter("impulse_rate must lie in [0, 1)".into()));
        }
        if !(self.impulse_amplitude >= 0.0 && self.impulse_amplitude.is_finite()) {
            return Err(Error::Parameter("impulse_amplitude must be nonnegative".into()));
        }
        Ok(())
    }

    /// Shift of each view after cycling the pattern.
    pub fn shifts_for(&self, n_views: usize) -> Vec<[i32; 2]> {
        if self.shift_pattern.is_empty() {
            return alloc::vec![[0, 0]; n_views];
        }
        (0..n_views)
            .map(|v| self.shift_pattern[v % self.shift_pattern.len()])
            .collect()
    }

    /// The geometry actually used during acquisition.
    pub fn acquisition_geometry(&self, geometry: &ConeBeamGeometry) -> ConeBeamGeometry {
        if self.shift_pattern.is_empty() {
            return geometry.clone();
        }
        let mut g = geometry.clone();
        g.per_view_detector_shift = self
            .shifts_for(geometry.n_views())
            .iter()
            .map(|s| [s[0] as f64, s[1] as f64])
            .collect();
        g
    }
}

fn stream_rng(seed: u64, tag: u64, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag);
    rng.set_stream(view as u64);
    rng
}

fn sample_poisson(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    if mean <= 0.0 {
        0.0
    } else if mean > GAUSSIAN_APPROX_THRESHOLD {
        let n = Normal::new(mean, mean.sqrt()).expect("finite mean");
        n.sample(rng).round().max(0.0)
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    }
}

/// Turns expected counts into measured counts in place.
fn apply_noise(
    expected: &mut [f64],
    pixels_per_view: usize,
    params: &AcquisitionParams,
    count_tag: u64,
    impulse_tag: u64,
) {
    par::for_each_chunk_mut(expected, pixels_per_view, |view, img| {
        if params.enable_poisson {
            let mut rng = stream_rng(params.rng_seed, count_tag, view);
            for v in img.iter_mut() {
                *v = sample_poisson(*v, &mut rng);
            }
        }
        if params.impulse_rate > 0.0 {
            let mut rng = stream_rng(params.rng_seed, impulse_tag, view);
            for v in img.iter_mut() {
                if rng.random::<f64>() < params.impulse_rate {
                    *v += params.impulse_amplitude;
                }
            }
        }
    });
}

/// Noiseless expected counts `I₀·exp(−A·f)` on the acquisition geometry.
pub fn expected_counts(
    volume: &Volume,
    geometry: &ConeBeamGeometry,
    params: &AcquisitionParams,
) -> Result<ProjectionStack> {
    params.validate()?;
    volume.validate()?;
    let geometry = params.acquisition_geometry(geometry);
    let projector = Projector::new(&geometry, &volume.grid)?;
    let mut values = alloc::vec![0.0; geometry.n_measurements()];
    projector.forward(&volume.values, &mut values)?;
    for v in values.iter_mut() {
        *v = params.incident_counts * (-*v).exp();
    }
    Ok(ProjectionStack {
        geometry,
        kind: ProjectionKind::Counts,
        values,
    })
}

/// Measured counts for a sample scan.
pub fn simulate_counts(
    volume: &Volume,
    geometry: &ConeBeamGeometry,
    params: &AcquisitionParams,
) -> Result<ProjectionStack> {
    let mut stack = expected_counts(volume, geometry, params)?;
    let ppv = stack.geometry.pixels_per_view();
    apply_noise(&mut stack.values, ppv, params, TAG_COUNTS, TAG_COUNTS_IMPULSE);
    Ok(stack)
}

/// Measured counts with no sample in the beam, drawn from streams
/// independent of [`simulate_counts`].
pub fn simulate_open_beam(
    geometry: &ConeBeamGeometry,
    params: &AcquisitionParams,
) -> Result<ProjectionStack> {
    params.validate()?;
    let geometry = params.acquisition_geometry(geometry);
    geometry.validate()?;
    let mut values = alloc::vec![params.incident_counts; geometry.n_measurements()];
    apply_noise(
        &mut values,
        geometry.pixels_per_view(),
        params,
        TAG_OPEN,
        TAG_OPEN_IMPULSE,
    );
    Ok(ProjectionStack {
        geometry,
        kind: ProjectionKind::Counts,
        values,
    })
}
