use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trisoct::experiment::{cmd_metrics, cmd_phantom, cmd_profile, cmd_reconstruct, cmd_simulate, cmd_sparse_sweep};
use trisoct::{CliError, Experiment, Overrides};
use trisoct_core::pipeline::Method;

/// Cone-beam CT simulation and reconstruction of TRISO-like particles.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Reconstruction method: fdk-naive, fdk-clipped, mbir-plain or mbir-thresholded.
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,
    /// Overrides the configured noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use every N-th view.
    #[arg(long, global = true, default_value_t = 1)]
    views_stride: usize,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "TRISOCT_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize the phantom.
    Phantom,
    /// Simulate sample and open-beam counts.
    Simulate,
    /// Reconstruct and append a metrics row.
    Reconstruct,
    /// Reconstruct at every subsampling factor and compare.
    SparseSweep,
    /// Write a line profile through an existing reconstruction.
    Profile,
    /// Recompute metrics of existing reconstructions.
    Metrics,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: trisoct_core::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let overrides = Overrides { seed: cli.seed, output_dir: cli.out, method: cli.method };
    let exp = Experiment::load(&path, &overrides)?;
    let stride = cli.views_stride;
    match cli.command {
        Command::Phantom => println!("{}", cmd_phantom(&exp)?),
        Command::Simulate => println!("{}", cmd_simulate(&exp)?),
        Command::Reconstruct => {
            let r = cmd_reconstruct(&exp, stride)?;
            println!("{} views={} nrmse={} region_stddev={}", r.method, r.n_views, r.nrmse, r.region_stddev);
        }
        Command::SparseSweep => {
            for r in cmd_sparse_sweep(&exp)? {
                println!(
                    "{} stride={} views={} nrmse_vs_full={} nrmse_vs_truth={}",
                    r.method, r.stride, r.n_views, r.nrmse_vs_full, r.nrmse_vs_truth
                );
            }
        }
        Command::Profile => println!("{}", cmd_profile(&exp, stride)?.display()),
        Command::Metrics => {
            for r in cmd_metrics(&exp, stride)? {
                println!("{} views={} nrmse={} region_stddev={}", r.method, r.n_views, r.nrmse, r.region_stddev);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
