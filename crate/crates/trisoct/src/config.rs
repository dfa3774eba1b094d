//! Declarative experiment configuration.
//!
//! An experiment file names a phantom, a geometry and an acquisition file
//! (paths relative to the experiment file) plus grid, preprocessing,
//! reconstruction, sweep and output settings. [`Experiment::load`] reads
//! everything, applies command-line overrides and validates the result.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trisoct_core::fdk::FdkParams;
use trisoct_core::mbir::{PriorParams, SolverParams};
use trisoct_core::phantom::TrisoPhantomSpec;
use trisoct_core::pipeline::{Method, PreprocOptions, ReconParams};
use trisoct_core::scan::AcquisitionParams;
use trisoct_core::{ConeBeamGeometry, VolumeGrid};

use crate::io::read_json;
use crate::CliError;

/// Geometry file contents. `view_angles` may be replaced by `n_views`
/// equally spaced angles over 2π starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFile {
    pub source_to_axis_distance: f64,
    pub source_to_detector_distance: f64,
    pub detector_rows: usize,
    pub detector_cols: usize,
    pub detector_pixel_pitch: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_views: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_angles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_view_detector_shift: Vec<[f64; 2]>,
}

impl GeometryFile {
    pub fn into_geometry(self) -> Result<ConeBeamGeometry, CliError> {
        let view_angles = match (self.view_angles, self.n_views) {
            (Some(a), None) => a,
            (None, Some(n)) if n > 0 => (0..n).map(|k| k as f64 * TAU / n as f64).collect(),
            (Some(a), Some(n)) if a.len() == n => a,
            _ => {
                return Err(CliError::Config(
                    "geometry needs either view_angles or a positive n_views (consistent if both)".into(),
                ))
            }
        };
        let geometry = ConeBeamGeometry {
            source_to_axis_distance: self.source_to_axis_distance,
            source_to_detector_distance: self.source_to_detector_distance,
            detector_rows: self.detector_rows,
            detector_cols: self.detector_cols,
            detector_pixel_pitch: self.detector_pixel_pitch,
            view_angles,
            per_view_detector_shift: self.per_view_detector_shift,
        };
        geometry.validate()?;
        Ok(geometry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub fdk: FdkParams,
    pub prior: PriorParams,
    #[serde(default)]
    pub solver: SolverParams,
}

fn default_method() -> Method {
    Method::MbirThresholded
}

impl ReconstructionConfig {
    pub fn params(&self) -> ReconParams {
        ReconParams { fdk: self.fdk.clone(), prior: self.prior, solver: self.solver.clone() }
    }
}

/// Regions used for reported metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Voxels within kernel radius + this many voxels are excluded from the
    /// NRMSE mask (an inscribed cylinder of the grid).
    #[serde(default = "default_margin")]
    pub kernel_margin_voxels: f64,
    /// Index of the uniform shell whose interior is used for the
    /// standard deviation (1 = first shell outside the kernel).
    #[serde(default = "default_shell")]
    pub stddev_shell: usize,
    /// The stddev shell is eroded by this many voxels at both surfaces.
    #[serde(default = "default_erosion")]
    pub stddev_erosion_voxels: f64,
}

fn default_margin() -> f64 {
    1.0
}

fn default_shell() -> usize {
    1
}

fn default_erosion() -> f64 {
    1.0
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            kernel_margin_voxels: default_margin(),
            stddev_shell: default_shell(),
            stddev_erosion_voxels: default_erosion(),
        }
    }
}

/// Voxel-index endpoints of the line profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub start: [usize; 3],
    pub end: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub phantom: PathBuf,
    pub geometry: PathBuf,
    pub acquisition: PathBuf,
    pub grid: VolumeGrid,
    #[serde(default)]
    pub preprocessing: PreprocOptions,
    pub reconstruction: ReconstructionConfig,
    #[serde(default = "default_subsampling")]
    pub subsampling: Vec<usize>,
    /// Relative to the experiment file.
    pub output_dir: PathBuf,
    /// Overrides the acquisition file's `rng_seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Defaults to the x axis through the grid center.
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
    /// Grayscale window of the PNG slice renders, 1/mm.
    #[serde(default = "default_window")]
    pub render_window: [f64; 2],
}

fn default_subsampling() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

fn default_window() -> [f64; 2] {
    [0.0, 2.0]
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub method: Option<Method>,
}

/// Fully loaded and validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub phantom: TrisoPhantomSpec,
    pub geometry: ConeBeamGeometry,
    pub acquisition: AcquisitionParams,
    /// Resolved output directory.
    pub output_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| -> Result<PathBuf, CliError> {
            let full = base.join(p);
            if full.is_file() {
                Ok(full)
            } else {
                Err(CliError::Config(format!("referenced file {} does not exist", full.display())))
            }
        };
        let phantom: TrisoPhantomSpec = read_json(&resolve(&config.phantom)?)?;
        let geometry = read_json::<GeometryFile>(&resolve(&config.geometry)?)?.into_geometry()?;
        let mut acquisition: AcquisitionParams = read_json(&resolve(&config.acquisition)?)?;

        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        if let Some(seed) = config.seed {
            acquisition.rng_seed = seed;
        }
        if let Some(m) = overrides.method {
            config.reconstruction.method = m;
        }
        let output_dir = match &overrides.output_dir {
            Some(dir) => dir.clone(),
            None => base.join(&config.output_dir),
        };
        let experiment = Self { config, phantom, geometry, acquisition, output_dir };
        experiment.validate()?;
        Ok(experiment)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.phantom.validate()?;
        self.geometry.validate()?;
        self.config.grid.validate()?;
        self.geometry.check_grid(&self.config.grid)?;
        self.acquisition.validate()?;
        self.config.reconstruction.prior.validate()?;
        let n = self.geometry.n_views();
        if self.config.subsampling.is_empty() {
            return Err(CliError::Config("subsampling list is empty".into()));
        }
        for &f in &self.config.subsampling {
            self.check_stride(f)?;
        }
        let shell = self.config.metrics.stddev_shell;
        if shell == 0 || shell >= self.phantom.shells.len() {
            return Err(CliError::Config(format!(
                "stddev_shell must lie in 1..{} (got {shell})",
                self.phantom.shells.len()
            )));
        }
        if let Some(p) = &self.config.profile {
            let dims = self.config.grid.dims();
            if (0..3).any(|a| p.start[a] >= dims[a] || p.end[a] >= dims[a]) {
                return Err(CliError::Config("profile endpoints lie outside the grid".into()));
            }
        }
        if n == 0 {
            return Err(CliError::Config("geometry has no views".into()));
        }
        if self.nrmse_mask().count() == 0 || self.stddev_mask().count() == 0 {
            return Err(CliError::Config("a metrics mask selects no voxels at this grid resolution".into()));
        }
        Ok(())
    }

    pub fn check_stride(&self, stride: usize) -> Result<(), CliError> {
        let n = self.geometry.n_views();
        if stride == 0 || n % stride != 0 {
            return Err(CliError::Config(format!(
                "subsampling factor {stride} does not divide the {n} views"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.config.grid
    }

    pub fn preprocessing(&self) -> &PreprocOptions {
        &self.config.preprocessing
    }

    pub fn method(&self) -> Method {
        self.config.reconstruction.method
    }

    pub fn profile(&self) -> ProfileConfig {
        self.config.profile.unwrap_or_else(|| {
            let g = self.grid();
            ProfileConfig { start: [0, g.ny / 2, g.nz / 2], end: [g.nx - 1, g.ny / 2, g.nz / 2] }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(n_views: Option<usize>, view_angles: Option<Vec<f64>>) -> GeometryFile {
        GeometryFile {
            source_to_axis_distance: 10.0,
            source_to_detector_distance: 30.0,
            detector_rows: 4,
            detector_cols: 4,
            detector_pixel_pitch: 0.1,
            n_views,
            view_angles,
            per_view_detector_shift: Vec::new(),
        }
    }

    #[test]
    fn n_views_shorthand() {
        let g = file(Some(4), None).into_geometry().unwrap();
        assert_eq!(g.view_angles, vec![0.0, TAU / 4.0, TAU / 2.0, 3.0 * TAU / 4.0]);
        assert_eq!(file(None, Some(vec![0.0, 1.0])).into_geometry().unwrap().n_views(), 2);
        assert!(file(None, None).into_geometry().is_err());
        assert!(file(Some(3), Some(vec![0.0])).into_geometry().is_err());
    }
}
