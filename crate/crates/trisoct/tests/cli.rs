use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use trisoct::io::{read_stack, read_volume};
use trisoct::{Experiment, Overrides};
use trisoct_core::phantom::rasterize_phantom;
use trisoct_core::projector::forward_project;
use trisoct_core::ProjectionKind;

/// Copy of `configs/tiny` in a temp dir, with `edit(file, json)` applied
/// to each JSON file.
fn tiny(edit: impl Fn(&str, &mut Value)) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny");
    for name in ["experiment.json", "phantom.json", "geometry.json", "acquisition.json"] {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(src.join(name)).unwrap()).unwrap();
        if name == "experiment.json" {
            v["output_dir"] = json!("out");
        }
        edit(name, &mut v);
        fs::write(dir.path().join(name), serde_json::to_string_pretty(&v).unwrap()).unwrap();
    }
    let config = dir.path().join("experiment.json");
    (dir, config)
}

fn trisoct(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trisoct"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn load(config: &Path) -> Experiment {
    Experiment::load(config, &Overrides::default()).unwrap()
}

#[test]
fn phantom_written_and_round_trips() {
    let (dir, config) = tiny(|_, _| {});
    let out = trisoct(&["phantom"], &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("grid 16x16x16"));
    let (volume, sidecar) = read_volume(&dir.path().join("out/phantom")).unwrap();
    assert_eq!(sidecar.shape, vec![16, 16, 16]);
    assert_eq!(fs::metadata(dir.path().join("out/phantom.raw")).unwrap().len(), 16 * 16 * 16 * 8);
    let exp = load(&config);
    let truth = exp.ground_truth().unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&volume.values), bits(&truth.values));
    assert!(dir.path().join("out/config.resolved.json").is_file());
    assert!(dir.path().join("out/phantom.png").is_file());
}

#[test]
fn invalid_configs_exit_with_code_2() {
    let (_d, config) = tiny(|name, v| {
        if name == "phantom.json" {
            v["shells"][1]["outer_radius"] = json!(0.1);
        }
    });
    let out = trisoct(&["phantom"], &config);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let (_d, config) = tiny(|name, v| {
        if name == "experiment.json" {
            v["subsampling"] = json!([1, 3]);
        }
    });
    assert_eq!(trisoct(&["sparse-sweep"], &config).status.code(), Some(2));

    let (_d, config) = tiny(|name, v| {
        if name == "experiment.json" {
            v["geometry"] = json!("missing.json");
        }
    });
    assert_eq!(trisoct(&["phantom"], &config).status.code(), Some(2));

    let (_d, config) = tiny(|_, _| {});
    assert_eq!(trisoct(&["reconstruct", "--method", "fdk"], &config).status.code(), Some(2));
    assert_eq!(trisoct(&["reconstruct", "--views-stride", "3"], &config).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let (dir, config) = tiny(|_, _| {});
    let read = |seed: &str| {
        assert!(trisoct(&["simulate", "--seed", seed], &config).status.success());
        let bytes = fs::read(dir.path().join("out/counts.raw")).unwrap();
        let (_, sidecar) = read_stack(&dir.path().join("out/counts"), ProjectionKind::Counts).unwrap();
        assert_eq!(sidecar.seed, Some(seed.parse().unwrap()));
        assert_eq!(sidecar.incident_counts, Some(2e4));
        bytes
    };
    let a = read("5");
    assert_eq!(a, read("5"));
    assert_ne!(a, read("6"));
}

#[test]
fn noiseless_simulation_matches_beer_lambert() {
    let (dir, config) = tiny(|name, v| {
        if name == "acquisition.json" {
            v["enable_poisson"] = json!(false);
            v["impulse_rate"] = json!(0.0);
            v["shift_pattern"] = json!([]);
        }
    });
    assert!(trisoct(&["simulate"], &config).status.success());
    let exp = load(&config);
    let (counts, _) = read_stack(&dir.path().join("out/counts"), ProjectionKind::Counts).unwrap();
    let line = forward_project(&rasterize_phantom(&exp.phantom, exp.grid()).unwrap(), &exp.geometry).unwrap();
    for (c, l) in counts.values.iter().zip(&line.values) {
        let expect = 2e4 * (-l).exp();
        assert!((c - expect).abs() <= 1e-6 * expect.max(1e-300));
    }
}

#[test]
fn reconstruct_profile_and_metrics() {
    let (dir, config) = tiny(|_, _| {});
    let out = trisoct(&["reconstruct", "--method", "fdk-clipped"], &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = trisoct(&["reconstruct", "--method", "mbir-thresholded", "--views-stride", "2"], &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    for f in ["recon_fdk-clipped.raw", "recon_fdk-clipped.png", "recon_mbir-thresholded_s2.raw", "trace_mbir-thresholded_s2.csv"] {
        assert!(o.join(f).is_file(), "{f}");
    }
    let trace = fs::read_to_string(o.join("trace_mbir-thresholded_s2.csv")).unwrap();
    assert!(trace.starts_with("iteration,data_cost,prior_cost,total_cost\n"));
    let metrics = fs::read_to_string(o.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "# nrmse normalizer: reference l2 norm over mask");
    assert_eq!(lines[1], "experiment_id,method,n_views,nrmse,region_stddev");
    assert!(lines[2].starts_with("tiny,fdk-clipped,16,"));
    assert!(lines[3].starts_with("tiny,mbir-thresholded,8,"));

    let out = trisoct(&["profile", "--method", "fdk-clipped"], &config);
    assert!(out.status.success());
    let profile = fs::read_to_string(o.join("profile_fdk-clipped.csv")).unwrap();
    assert_eq!(profile.lines().count(), 1 + 16);

    let out = trisoct(&["metrics"], &config);
    assert!(out.status.success());
    let summary = fs::read_to_string(o.join("metrics_summary.csv")).unwrap();
    assert!(summary.lines().nth(2).unwrap().starts_with("tiny,fdk-clipped,16,"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn sweep_full_view_rows_are_zero() {
    let (dir, config) = tiny(|_, _| {});
    let out = trisoct(&["sparse-sweep", "--threads", "1"], &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("out/sweep.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["experiment_id", "method", "stride", "n_views", "nrmse_vs_full", "nrmse_vs_truth", "region_stddev"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let stride: usize = r[2].parse().unwrap();
        assert_eq!(r[3].parse::<usize>().unwrap(), 16 / stride);
        if stride == 1 {
            assert_eq!(&r[4], "0");
        }
    }
    let (_, sidecar) = read_volume(&dir.path().join("out/recon_fdk-clipped_s4")).unwrap();
    assert_eq!(sidecar.view_stride, Some(4));
    assert!(dir.path().join("out/profile_mbir-thresholded_s2.csv").is_file());
}
