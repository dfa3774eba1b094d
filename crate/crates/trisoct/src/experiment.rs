//! Command implementations. Every command writes into the experiment's
//! output directory, echoes the resolved configuration there, and produces
//! byte-identical files for identical inputs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use trisoct_core::metrics::{line_profile, nrmse, region_stddev, RegionMask};
use trisoct_core::phantom::rasterize_phantom;
use trisoct_core::pipeline::{reconstruct, subsample_views, Method, Reconstruction};
use trisoct_core::scan::{simulate_counts, simulate_open_beam};
use trisoct_core::{ProjectionKind, ProjectionStack, Volume};

use crate::config::Experiment;
use crate::io::{self, Sidecar};
use crate::render::write_axial_png;
use crate::CliError;

pub const METRICS_HEADER: &str = "# nrmse normalizer: reference l2 norm over mask";
/// Methods compared by the sparse-view sweep.
pub const SWEEP_METHODS: [Method; 2] = [Method::FdkClipped, Method::MbirThresholded];

fn csv_err(e: csv::Error) -> CliError {
    CliError::Format(e.to_string())
}

/// `recon_<method>` or `recon_<method>_s<stride>` for strides above 1.
pub fn recon_name(method: Method, stride: usize) -> String {
    if stride == 1 {
        format!("recon_{method}")
    } else {
        format!("recon_{method}_s{stride}")
    }
}

impl Experiment {
    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn prepare_output(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.output_dir)
            .map_err(|source| CliError::Io { path: self.output_dir.clone(), source })?;
        io::write_json(&self.out("config.resolved.json"), self)
    }

    pub fn ground_truth(&self) -> Result<Volume, CliError> {
        Ok(rasterize_phantom(&self.phantom, self.grid())?)
    }

    /// Sample and open-beam counts on the acquisition geometry.
    pub fn simulate(&self) -> Result<(ProjectionStack, ProjectionStack), CliError> {
        let truth = self.ground_truth()?;
        let counts = simulate_counts(&truth, &self.geometry, &self.acquisition)?;
        let open = simulate_open_beam(&self.geometry, &self.acquisition)?;
        Ok((counts, open))
    }

    /// Inscribed z-cylinder of the grid minus the kernel and a margin.
    pub fn nrmse_mask(&self) -> RegionMask {
        let g = self.grid();
        let radius = 0.5 * g.nx.min(g.ny) as f64 * g.voxel_size;
        let half_height = 0.5 * g.nz as f64 * g.voxel_size;
        let exclude = self.phantom.kernel_radius() + self.config.metrics.kernel_margin_voxels * g.voxel_size;
        RegionMask::interior_cylinder(g, self.phantom.center, radius, half_height, exclude)
    }

    /// Interior of the configured uniform shell, eroded at both surfaces.
    pub fn stddev_mask(&self) -> RegionMask {
        let g = self.grid();
        let k = self.config.metrics.stddev_shell;
        let erode = self.config.metrics.stddev_erosion_voxels * g.voxel_size;
        let inner = self.phantom.shells[k - 1].outer_radius + erode;
        let outer = self.phantom.shells[k].outer_radius - erode;
        RegionMask::spherical_shell(g, self.phantom.center, inner, outer)
    }

    /// Counts from the output directory when they match this experiment's
    /// seed and geometry, otherwise freshly simulated (and written).
    pub fn load_or_simulate(&self) -> Result<(ProjectionStack, ProjectionStack), CliError> {
        let expected = self.acquisition.acquisition_geometry(&self.geometry);
        let stem_c = self.out("counts");
        let stem_o = self.out("open_beam");
        if io::raw_path(&stem_c).is_file() && io::raw_path(&stem_o).is_file() {
            let (counts, sc) = io::read_stack(&stem_c, ProjectionKind::Counts)?;
            let (open, so) = io::read_stack(&stem_o, ProjectionKind::Counts)?;
            let fresh = |s: &Sidecar| {
                s.seed == Some(self.acquisition.rng_seed)
                    && s.incident_counts == Some(self.acquisition.incident_counts)
                    && s.geometry.as_ref() == Some(&expected)
            };
            if fresh(&sc) && fresh(&so) {
                info!("using counts from {}", stem_c.display());
                return Ok((counts, open));
            }
        }
        self.write_counts()
    }

    fn write_counts(&self) -> Result<(ProjectionStack, ProjectionStack), CliError> {
        let (counts, open) = self.simulate()?;
        for (stack, name) in [(&counts, "counts"), (&open, "open_beam")] {
            let sidecar = Sidecar {
                seed: Some(self.acquisition.rng_seed),
                incident_counts: Some(self.acquisition.incident_counts),
                ..Sidecar::for_stack(stack, name)
            };
            io::write_stack(&self.out(name), stack, &sidecar)?;
        }
        Ok((counts, open))
    }

    /// Reconstruction of every `stride`-th view.
    pub fn reconstruct_with(
        &self,
        method: Method,
        counts: &ProjectionStack,
        open: &ProjectionStack,
        stride: usize,
    ) -> Result<Reconstruction, CliError> {
        self.check_stride(stride)?;
        let (c, o) = if stride == 1 {
            (counts.clone(), open.clone())
        } else {
            (subsample_views(counts, stride)?, subsample_views(open, stride)?)
        };
        info!("reconstructing {method} from {} views", c.n_views());
        Ok(reconstruct(method, &c, &o, self.grid(), self.preprocessing(), &self.config.reconstruction.params())?)
    }

    fn write_recon(&self, recon: &Reconstruction, stride: usize) -> Result<(), CliError> {
        let name = recon_name(recon.method, stride);
        let window = self.config.render_window;
        let sidecar = Sidecar {
            seed: Some(self.acquisition.rng_seed),
            method: Some(recon.method.to_string()),
            view_stride: Some(stride),
            threshold_used: recon.threshold_used,
            png_window: Some(window),
            ..Sidecar::for_volume(&recon.volume, "reconstruction")
        };
        io::write_volume(&self.out(&name), &recon.volume, &sidecar)?;
        write_axial_png(&self.out(&format!("{name}.png")), &recon.volume, window)?;
        if let Some(trace) = &recon.trace {
            let path = self.out(&format!("trace_{}.csv", name.trim_start_matches("recon_")));
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(["iteration", "data_cost", "prior_cost", "total_cost"]).map_err(csv_err)?;
            for r in &trace.records {
                w.write_record([r.iteration.to_string(), r.data.to_string(), r.prior.to_string(), r.total.to_string()])
                    .map_err(csv_err)?;
            }
            w.flush().map_err(|source| CliError::Io { path, source })?;
        }
        Ok(())
    }

    fn write_profile(&self, volume: &Volume, path: &Path) -> Result<(), CliError> {
        let p = self.profile();
        let samples = line_profile(volume, p.start, p.end)?;
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["position_mm", "ix", "iy", "iz", "value"]).map_err(csv_err)?;
        for s in samples {
            w.write_record([
                s.position.to_string(),
                s.index[0].to_string(),
                s.index[1].to_string(),
                s.index[2].to_string(),
                s.value.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }
}

/// Metrics of one reconstruction against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: Method,
    pub n_views: usize,
    pub nrmse: f64,
    pub region_stddev: f64,
}

pub fn metrics_row(exp: &Experiment, truth: &Volume, recon: &Volume, method: Method, n_views: usize) -> Result<MetricsRow, CliError> {
    Ok(MetricsRow {
        method,
        n_views,
        nrmse: nrmse(recon, truth, &exp.nrmse_mask())?,
        region_stddev: region_stddev(recon, &exp.stddev_mask())?,
    })
}

fn append_metrics(exp: &Experiment, row: &MetricsRow) -> Result<(), CliError> {
    let path = exp.out("metrics.csv");
    let new = !path.is_file();
    let mut text = String::new();
    if new {
        text.push_str(METRICS_HEADER);
        text.push_str("\nexperiment_id,method,n_views,nrmse,region_stddev\n");
    }
    text.push_str(&format!(
        "{},{},{},{},{}\n",
        exp.config.experiment_id, row.method, row.n_views, row.nrmse, row.region_stddev
    ));
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| CliError::Io { path: path.clone(), source })?;
    f.write_all(text.as_bytes()).map_err(|source| CliError::Io { path, source })
}

/// Rasterizes and writes the phantom. Returns a one-line grid summary.
pub fn cmd_phantom(exp: &Experiment) -> Result<String, CliError> {
    exp.prepare_output()?;
    let truth = exp.ground_truth()?;
    let sidecar = Sidecar { png_window: Some(exp.config.render_window), ..Sidecar::for_volume(&truth, "phantom") };
    io::write_volume(&exp.out("phantom"), &truth, &sidecar)?;
    write_axial_png(&exp.out("phantom.png"), &truth, exp.config.render_window)?;
    let g = exp.grid();
    let max = truth.values.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "grid {}x{}x{} voxel {} mm center {:?}; attenuation max {} 1/mm",
        g.nx, g.ny, g.nz, g.voxel_size, g.center, max
    ))
}

pub fn cmd_simulate(exp: &Experiment) -> Result<String, CliError> {
    exp.prepare_output()?;
    let (counts, _) = exp.write_counts()?;
    let starved = counts.values.iter().filter(|&&c| c < exp.preprocessing().threshold).count();
    Ok(format!(
        "{} views of {}x{}; seed {}; {:.2}% of pixels below {} counts",
        counts.n_views(),
        counts.geometry.detector_rows,
        counts.geometry.detector_cols,
        exp.acquisition.rng_seed,
        100.0 * starved as f64 / counts.values.len() as f64,
        exp.preprocessing().threshold
    ))
}

pub fn cmd_reconstruct(exp: &Experiment, stride: usize) -> Result<MetricsRow, CliError> {
    exp.prepare_output()?;
    let (counts, open) = exp.load_or_simulate()?;
    let method = exp.method();
    let recon = exp.reconstruct_with(method, &counts, &open, stride)?;
    exp.write_recon(&recon, stride)?;
    let truth = exp.ground_truth()?;
    let row = metrics_row(exp, &truth, &recon.volume, method, counts.n_views() / stride)?;
    append_metrics(exp, &row)?;
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub stride: usize,
    pub n_views: usize,
    pub nrmse_vs_full: f64,
    pub nrmse_vs_truth: f64,
    pub region_stddev: f64,
}

/// Reconstructs with [`SWEEP_METHODS`] at every subsampling factor and
/// writes `sweep.csv` plus one profile CSV per reconstruction.
pub fn cmd_sparse_sweep(exp: &Experiment) -> Result<Vec<SweepRow>, CliError> {
    exp.prepare_output()?;
    let (counts, open) = exp.load_or_simulate()?;
    let truth = exp.ground_truth()?;
    exp.write_profile(&truth, &exp.out("profile_truth.csv"))?;
    let mask = exp.nrmse_mask();
    let mut rows = Vec::new();
    for method in SWEEP_METHODS {
        let full = exp.reconstruct_with(method, &counts, &open, 1)?;
        for &stride in &exp.config.subsampling {
            let recon = if stride == 1 { full.clone() } else { exp.reconstruct_with(method, &counts, &open, stride)? };
            exp.write_recon(&recon, stride)?;
            let name = recon_name(method, stride);
            exp.write_profile(&recon.volume, &exp.out(&format!("profile_{}.csv", name.trim_start_matches("recon_"))))?;
            let m = metrics_row(exp, &truth, &recon.volume, method, counts.n_views() / stride)?;
            rows.push(SweepRow {
                method,
                stride,
                n_views: m.n_views,
                nrmse_vs_full: nrmse(&recon.volume, &full.volume, &mask)?,
                nrmse_vs_truth: m.nrmse,
                region_stddev: m.region_stddev,
            });
        }
    }
    let path = exp.out("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["experiment_id", "method", "stride", "n_views", "nrmse_vs_full", "nrmse_vs_truth", "region_stddev"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            exp.config.experiment_id.clone(),
            r.method.to_string(),
            r.stride.to_string(),
            r.n_views.to_string(),
            r.nrmse_vs_full.to_string(),
            r.nrmse_vs_truth.to_string(),
            r.region_stddev.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| CliError::Io { path, source })?;
    Ok(rows)
}

fn read_recon(exp: &Experiment, method: Method, stride: usize) -> Result<Volume, CliError> {
    let stem = exp.out(&recon_name(method, stride));
    if !io::sidecar_path(&stem).is_file() {
        return Err(CliError::Config(format!(
            "{} not found; run `reconstruct` first",
            io::raw_path(&stem).display()
        )));
    }
    let (volume, _) = io::read_volume(&stem)?;
    if &volume.grid != exp.grid() {
        return Err(CliError::Format(format!("{} is on a different grid", stem.display())));
    }
    Ok(volume)
}

/// Writes the configured line profile through an existing reconstruction
/// and through the ground truth. Returns the reconstruction profile path.
pub fn cmd_profile(exp: &Experiment, stride: usize) -> Result<PathBuf, CliError> {
    exp.prepare_output()?;
    let method = exp.method();
    let volume = read_recon(exp, method, stride)?;
    exp.write_profile(&exp.ground_truth()?, &exp.out("profile_truth.csv"))?;
    let name = recon_name(method, stride);
    let path = exp.out(&format!("profile_{}.csv", name.trim_start_matches("recon_")));
    exp.write_profile(&volume, &path)?;
    Ok(path)
}

/// Metrics of every existing reconstruction at `stride`, written to
/// `metrics_summary.csv`.
pub fn cmd_metrics(exp: &Experiment, stride: usize) -> Result<Vec<MetricsRow>, CliError> {
    exp.prepare_output()?;
    exp.check_stride(stride)?;
    let truth = exp.ground_truth()?;
    let n_views = exp.geometry.n_views() / stride;
    let mut rows = Vec::new();
    for method in Method::ALL {
        if io::sidecar_path(&exp.out(&recon_name(method, stride))).is_file() {
            let volume = read_recon(exp, method, stride)?;
            rows.push(metrics_row(exp, &truth, &volume, method, n_views)?);
        }
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!("no reconstructions at stride {stride} in {}", exp.output_dir.display())));
    }
    let mut text = format!("{METRICS_HEADER}\nexperiment_id,method,n_views,nrmse,region_stddev\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            exp.config.experiment_id, r.method, r.n_views, r.nrmse, r.region_stddev
        ));
    }
    let path = exp.out("metrics_summary.csv");
    fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;
    Ok(rows)
}
