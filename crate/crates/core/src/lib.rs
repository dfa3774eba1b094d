//! Cone-beam CT reconstruction for strongly attenuating core-shell samples.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature turns on
//! rayon parallelism and FFT-based ramp filtering; every parallel path
//! reduces in a fixed order, so results do not depend on the thread count.
//!
//! Module map:
//!
//! * [`geometry`]: acquisition geometry, voxel grid, volumes and projection stacks.
//! * [`projector`]: matched ray-driven forward projector `A` and back projector `Aᵀ`.
//! * [`phantom`]: layered spherical phantoms and their analytic line integrals.
//! * [`scan`]: Beer–Lambert count simulation with Poisson and impulse noise.
//! * [`preproc`]: median filtering, flat-field log normalization, shift
//!   correction, count clipping and weight thresholding.
//! * [`fdk`]: Feldkamp–Davis–Kress analytic reconstruction.
//! * [`mbir`]: weighted least squares + qGGMRF prior minimized with OGM.
//! * [`metrics`]: NRMSE, region statistics and line profiles.
//! * [`pipeline`]: the four compared reconstruction pipelines and view subsetting.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod fdk;
pub mod geometry;
pub mod mbir;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod preproc;
pub mod projector;
pub mod scan;

mod par;

pub use error::{Error, Result};
pub use geometry::{ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume, VolumeGrid};

/// `Float` supplies `sqrt`, `exp`, `powf`, … through libm when `std` is off.
#[allow(unused_imports)]
pub(crate) mod prelude {
    #[cfg(not(feature = "std"))]
    pub use num_traits::Float;
}
