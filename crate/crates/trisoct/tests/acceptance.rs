//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Criteria 7 and 8 use `configs/accept`, criterion 5 the
//! desk configuration, criteria 6 and 10 `configs/tiny`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trisoct::{Experiment, Overrides};
use trisoct_core::mbir::prior::{rho, rho_prime};
use trisoct_core::mbir::{
    next_t, ogm_reconstruct, MbirProblem, Neighborhood, PriorParams, SolverParams,
};
use trisoct_core::metrics::nrmse;
use trisoct_core::phantom::{phantom_line_integral, rasterize_phantom, ShellSpec, TrisoPhantomSpec};
use trisoct_core::pipeline::{prepare, Method, Reconstruction};
use trisoct_core::preproc::{apply_shift_correction, median_filter, normalize_and_log, WeightSet};
use trisoct_core::projector::{forward_project, Projector};
use trisoct_core::{ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume, VolumeGrid};

/// Upper bound on mbir-thresholded NRMSE against its own full-view
/// reconstruction at half the views, frozen from the first seeded run of
/// `configs/accept` plus a margin.
const HALF_VIEW_NRMSE_BOUND: f64 = 0.10;

type Outcome = Result<(bool, String), String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, out: &Path) -> Experiment {
    let overrides = Overrides { output_dir: Some(out.to_path_buf()), ..Default::default() };
    Experiment::load(&configs().join(name).join("experiment.json"), &overrides).expect("shipped config loads")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn c1_adjoint() -> Outcome {
    let geometry = ConeBeamGeometry::circular(10.0, 30.0, 8, 8, 0.15, 4);
    let grid = VolumeGrid::cubic(16, 0.02);
    let p = Projector::new(&geometry, &grid).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f: Vec<f64> = (0..p.n_voxels()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..p.n_measurements()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut af, mut atg) = (vec![0.0; g.len()], vec![0.0; f.len()]);
        p.forward(&f, &mut af).map_err(|e| e.to_string())?;
        p.back(&g, &mut atg).map_err(|e| e.to_string())?;
        let (lhs, rhs) = (dot(&af, &g), dot(&f, &atg));
        worst = worst.max((lhs - rhs).abs() / lhs.abs());
    }
    Ok((worst < 1e-10, format!("max relative mismatch {worst:.2e} (< 1e-10)")))
}

fn c2_sphere_chords() -> Outcome {
    let (r, mu) = (0.5, 1.3);
    let spec = TrisoPhantomSpec {
        center: [0.0; 3],
        shells: vec![ShellSpec { outer_radius: r, attenuation: mu }],
        background_attenuation: 0.0,
        defects: Vec::new(),
    };
    let grid = VolumeGrid::cubic(128, 1.1 / 128.0);
    let volume = rasterize_phantom(&spec, &grid).map_err(|e| e.to_string())?;
    let geometry = ConeBeamGeometry::circular(20.0, 60.0, 32, 32, 0.1, 4);
    let proj = forward_project(&volume, &geometry).map_err(|e| e.to_string())?;
    let (mut worst, mut n): (f64, usize) = (0.0, 0);
    for view in 0..geometry.n_views() {
        for row in 0..32 {
            for col in 0..32 {
                let ray = geometry.ray(view, row, col);
                let d2 = {
                    let o = ray.origin;
                    let u = ray.direction;
                    let t = -(o[0] * u[0] + o[1] * u[1] + o[2] * u[2]) / (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
                    (0..3).map(|a| (o[a] + t * u[a]).powi(2)).sum::<f64>()
                };
                if d2 >= (0.8 * r) * (0.8 * r) {
                    continue;
                }
                let exact = 2.0 * mu * (r * r - d2).sqrt();
                debug_assert!((phantom_line_integral(&spec, &ray) - exact).abs() < 1e-9);
                let got = proj.values[(view * 32 + row) * 32 + col];
                worst = worst.max((got - exact).abs() / exact);
                n += 1;
            }
        }
    }
    Ok((n > 0 && worst < 0.02, format!("{n} rays with d < 0.8r, max relative error {:.3}% (< 2%)", 100.0 * worst)))
}

fn c3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let geometry = ConeBeamGeometry::circular(10.0, 30.0, 8, 8, 0.12, 4);
    let grid = VolumeGrid::cubic(8, 0.03);
    let m = geometry.n_measurements();
    let (mut worst_data, mut worst_prior, mut worst_total): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..10 {
        let f: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let g: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let w = WeightSet { values: (0..m).map(|_| rng.random_range(0.0..100.0)).collect(), threshold_used: None };
        let zero = WeightSet { values: vec![0.0; m], threshold_used: None };
        let prior = PriorParams {
            sigma_f: rng.random_range(0.1..1.0),
            c: rng.random_range(0.1..2.0),
            p: rng.random_range(1.0..2.0),
            neighborhood: Neighborhood::TwentySix,
        };
        let cases = [(&w, None), (&zero, Some(prior)), (&w, Some(prior))];
        for (k, (weights, prior)) in cases.into_iter().enumerate() {
            let problem = MbirProblem::new(&geometry, &grid, &g, weights, prior).map_err(|e| e.to_string())?;
            let grad = problem.gradient(&f).map_err(|e| e.to_string())?;
            let cost = |x: &[f64]| problem.cost(x).unwrap().total();
            let mut worst: f64 = 0.0;
            for _ in 0..6 {
                let d: Vec<f64> = (0..f.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let eps = 1e-5;
                let plus: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
                let minus: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
                let fd = (cost(&plus) - cost(&minus)) / (2.0 * eps);
                let an = dot(&grad, &d);
                worst = worst.max((fd - an).abs() / an.abs());
            }
            let slot = [&mut worst_data, &mut worst_prior, &mut worst_total];
            *slot[k] = slot[k].max(worst);
        }
    }
    let ok = worst_data < 1e-4 && worst_prior < 1e-4 && worst_total < 1e-4;
    Ok((ok, format!("max relative error data {worst_data:.1e}, prior {worst_prior:.1e}, total {worst_total:.1e} (< 1e-4)")))
}

fn c4_rho() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for p in [1.0, 1.2, 2.0] {
        let params = PriorParams { sigma_f: 0.6, c: 0.4, p, neighborhood: Neighborhood::TwentySix };
        exact &= rho(0.0, &params) == 0.0 && rho_prime(0.0, &params) == 0.0;
        for _ in 0..100 {
            let d: f64 = rng.random_range(-4.0..4.0);
            exact &= rho(-d, &params) == rho(d, &params);
            exact &= rho_prime(-d, &params) == -rho_prime(d, &params);
            let h = 1e-6 * d.abs().max(1e-3);
            let fd = (rho(d + h, &params) - rho(d - h, &params)) / (2.0 * h);
            let an = rho_prime(d, &params);
            worst = worst.max((fd - an).abs() / an.abs());
        }
    }
    Ok((exact && worst < 1e-6, format!("rho(0)=0, parity exact: {exact}; finite-difference error {worst:.1e} (< 1e-6)")))
}

fn c5_ogm(scratch: &Path) -> Outcome {
    // 1-voxel problem: W = 1, intersection length 1, g = 5.
    let geometry = ConeBeamGeometry::circular(10.0, 30.0, 1, 1, 0.1, 1);
    let grid = VolumeGrid::cubic(1, 1.0);
    let g = [5.0];
    let w = WeightSet { values: vec![1.0], threshold_used: None };
    let problem = MbirProblem::new(&geometry, &grid, &g, &w, None).map_err(|e| e.to_string())?;
    let solver = SolverParams { max_iterations: 50, ..Default::default() };
    let one = ogm_reconstruct(&problem, &solver, &Volume::zeros(grid)).map_err(|e| e.to_string())?;
    let one_err = (one.volume.values[0] - 5.0).abs();

    let exp = load("desk", scratch);
    let (counts, open) = exp.simulate().map_err(|e| e.to_string())?;
    let mut desk = exp.clone();
    desk.config.reconstruction.solver.max_iterations = 5;
    let r = desk.reconstruct_with(Method::MbirThresholded, &counts, &open, 1).map_err(|e| e.to_string())?;
    let trace = r.trace.ok_or("no cost trace")?;
    let (c0, ck) = (trace.records[0].total, trace.records.last().unwrap().total);

    let mut t: f64 = 1.0;
    let mut t_exact = true;
    for _ in 0..10 {
        let next = next_t(t);
        t_exact &= next == (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        t = next;
    }
    let ok = one_err < 1e-6 && ck < c0 && t_exact;
    Ok((
        ok,
        format!(
            "1-voxel |f50 - 5| = {one_err:.3e} (< 1e-6); desk cost {c0:.6e} -> {ck:.6e} after {} iterations; t-sequence exact: {t_exact}",
            desk.config.reconstruction.solver.max_iterations
        ),
    ))
}

fn c6_zero_weight(scratch: &Path) -> Outcome {
    let exp = load("tiny", scratch);
    let (counts, open) = exp.simulate().map_err(|e| e.to_string())?;
    let options = exp.preprocessing();
    let prepared = prepare(&counts, &open, options, false, Some(options.threshold)).map_err(|e| e.to_string())?;
    let initial = exp.reconstruct_with(Method::FdkClipped, &counts, &open, 1).map_err(|e| e.to_string())?.volume;
    let zeros: Vec<usize> = (0..prepared.weights.values.len()).filter(|&i| prepared.weights.values[i] == 0.0).collect();
    if zeros.len() < 100 {
        return Ok((false, format!("only {} zero-weight pixels", zeros.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut perturbed = prepared.projections.values.clone();
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < 100 {
        picked.insert(zeros[rng.random_range(0..zeros.len())]);
    }
    for &i in &picked {
        perturbed[i] += rng.random_range(-1e6..1e6);
    }
    let recon = exp.config.reconstruction.params();
    let run = |g: &[f64]| -> Result<Vec<u64>, String> {
        let problem = MbirProblem::new(&prepared.projections.geometry, exp.grid(), g, &prepared.weights, Some(recon.prior))
            .map_err(|e| e.to_string())?;
        let r = ogm_reconstruct(&problem, &recon.solver, &initial).map_err(|e| e.to_string())?;
        Ok(r.volume.values.iter().map(|v| v.to_bits()).collect())
    };
    let same = run(&prepared.projections.values)? == run(&perturbed)?;
    Ok((same, format!("100 of {} zero-weight pixels perturbed, output bit-identical: {same}", zeros.len())))
}

struct AcceptRun {
    exp: Experiment,
    counts: ProjectionStack,
    open: ProjectionStack,
    full: BTreeMap<&'static str, Reconstruction>,
}

fn c7_ordering(run: &mut AcceptRun) -> Outcome {
    let truth = run.exp.ground_truth().map_err(|e| e.to_string())?;
    let mut nr = BTreeMap::new();
    let mut sd = BTreeMap::new();
    for method in Method::ALL {
        let r = run.exp.reconstruct_with(method, &run.counts, &run.open, 1).map_err(|e| e.to_string())?;
        let row = trisoct::experiment::metrics_row(&run.exp, &truth, &r.volume, method, run.counts.n_views())
            .map_err(|e| e.to_string())?;
        nr.insert(method.as_str(), row.nrmse);
        sd.insert(method.as_str(), row.region_stddev);
        run.full.insert(method.as_str(), r);
    }
    let stddev_ok = sd["fdk-naive"] > sd["fdk-clipped"] && sd["fdk-clipped"] > sd["mbir-thresholded"];
    let nrmse_ok = nr["mbir-thresholded"] <= nr["mbir-plain"] && nr["mbir-plain"] <= nr["fdk-clipped"];
    let fmt = |m: &BTreeMap<&str, f64>| {
        Method::ALL.iter().map(|k| format!("{k} {:.4}", m[k.as_str()])).collect::<Vec<_>>().join(", ")
    };
    Ok((
        stddev_ok && nrmse_ok,
        format!(
            "cladding stddev [{}] ordered: {stddev_ok}; nrmse [{}] ordered: {nrmse_ok}",
            fmt(&sd),
            fmt(&nr)
        ),
    ))
}

fn c8_sparse(run: &AcceptRun) -> Outcome {
    let mask = run.exp.nrmse_mask();
    let mut vs_full = BTreeMap::new();
    for method in [Method::FdkClipped, Method::MbirThresholded] {
        let full = &run.full.get(method.as_str()).ok_or("criterion 7 did not finish")?.volume;
        for stride in [2, 4, 8] {
            let r = run.exp.reconstruct_with(method, &run.counts, &run.open, stride).map_err(|e| e.to_string())?;
            vs_full.insert((method.as_str(), stride), nrmse(&r.volume, full, &mask).map_err(|e| e.to_string())?);
        }
    }
    let better = [4, 8].iter().all(|&s| vs_full[&("mbir-thresholded", s)] < vs_full[&("fdk-clipped", s)]);
    let half = vs_full[&("mbir-thresholded", 2)];
    let bounded = half < HALF_VIEW_NRMSE_BOUND;
    let list = [2, 4, 8]
        .iter()
        .map(|s| format!("1/{s}: mbir {:.4} fdk {:.4}", vs_full[&("mbir-thresholded", *s)], vs_full[&("fdk-clipped", *s)]))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((
        better && bounded,
        format!("nrmse vs own full view [{list}]; mbir better at 1/4 and 1/8: {better}; 1/2 below {HALF_VIEW_NRMSE_BOUND}: {bounded}"),
    ))
}

fn c9_preproc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut median_ok = true;
    for _ in 0..1000 {
        let img: Vec<f64> = (0..25).map(|_| rng.random_range(0..50) as f64).collect();
        let out = median_filter(&img, 5, 5, 3).map_err(|e| e.to_string())?;
        let (r, c) = (rng.random_range(1..4), rng.random_range(1..4));
        let mut patch: Vec<f64> = (0..9).map(|k| img[(r + k / 3 - 1) * 5 + c + k % 3 - 1]).collect();
        patch.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median_ok &= out[r * 5 + c] == patch[4];
    }

    let (rows, cols, views) = (6, 7, 4);
    let geometry = ConeBeamGeometry::circular(10.0, 30.0, rows, cols, 0.1, views);
    let original: Vec<f64> = (0..views * rows * cols).map(|_| rng.random_range(0.0..10.0)).collect();
    let shifts = [[0, 0], [0, 1], [2, -1], [-1, -3]];
    let mut recorded = vec![0.0; original.len()];
    for (v, &[dr, dc]) in shifts.iter().enumerate() {
        for r in 0..rows as i32 {
            for c in 0..cols as i32 {
                let (sr, sc) = (r - dr, c - dc);
                if (0..rows as i32).contains(&sr) && (0..cols as i32).contains(&sc) {
                    recorded[(v * rows + r as usize) * cols + c as usize] = original[(v * rows + sr as usize) * cols + sc as usize];
                }
            }
        }
    }
    let stack = ProjectionStack::new(geometry, ProjectionKind::LogNormalized, recorded).map_err(|e| e.to_string())?;
    let corrected = apply_shift_correction(&stack, &shifts).map_err(|e| e.to_string())?;
    let overlap = corrected.valid.iter().filter(|&&v| v).count();
    let shift_ok = (0..original.len()).all(|i| !corrected.valid[i] || corrected.projections.values[i] == original[i]);

    let g1 = ConeBeamGeometry::circular(10.0, 30.0, 1, 3, 0.1, 1);
    let open = ProjectionStack::new(g1.clone(), ProjectionKind::Counts, vec![1000.0; 3]).map_err(|e| e.to_string())?;
    let counts = ProjectionStack::new(g1, ProjectionKind::Counts, vec![1000.0, 1000.0 / std::f64::consts::E, 0.0])
        .map_err(|e| e.to_string())?;
    let g = normalize_and_log(&counts, &open).map_err(|e| e.to_string())?.values;
    let log_ok = g[0] == 0.0 && (g[1] - 1.0).abs() < 1e-15 && g[2] == 2000f64.ln();
    Ok((
        median_ok && shift_ok && log_ok,
        format!("median vs sort on 1000 patches: {median_ok}; shift round trip on {overlap} overlap pixels: {shift_ok}; log examples: {log_ok} (g = {g:?})"),
    ))
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output dir") {
        let entry = entry.expect("dir entry");
        files.insert(entry.file_name().to_string_lossy().into_owned(), fs::read(entry.path()).expect("readable"));
    }
    files
}

fn c10_reproducible(scratch: &Path) -> Outcome {
    let out = scratch.join("sweep");
    let config = configs().join("tiny/experiment.json");
    let mut runs = Vec::new();
    for threads in ["1", "2"] {
        let _ = fs::remove_dir_all(&out);
        let status = Command::new(env!("CARGO_BIN_EXE_trisoct"))
            .args(["sparse-sweep", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .env("RUST_LOG", "warn")
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Ok((false, format!("sparse-sweep with {threads} threads exited with {status}")));
        }
        runs.push(read_dir_bytes(&out));
    }
    let volumes = runs[0].keys().filter(|k| k.ends_with(".raw")).count();
    let csvs = runs[0].keys().filter(|k| k.ends_with(".csv")).count();
    let same = runs[0] == runs[1];
    Ok((same && volumes > 0 && csvs > 0, format!("{} files ({volumes} raw, {csvs} csv) byte-identical across 1 and 2 threads: {same}", runs[0].len())))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |n: usize, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass && elapsed <= budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.1} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    };
    let secs = Duration::from_secs;
    report(1, "adjoint identity", secs(10), &mut c1_adjoint);
    report(2, "sphere chord lengths", secs(60), &mut c2_sphere_chords);
    report(3, "gradient vs finite differences", secs(60), &mut c3_gradients);
    report(4, "qGGMRF analytic suite", secs(5), &mut c4_rho);
    report(5, "OGM convergence", secs(1800), &mut || c5_ogm(&scratch.path().join("desk")));
    report(6, "zero-weight insensitivity", secs(120), &mut || c6_zero_weight(&scratch.path().join("tiny")));

    let accept = load("accept", &scratch.path().join("accept"));
    let (counts, open) = accept.simulate().expect("accept scenario simulates");
    let mut run = AcceptRun { exp: accept, counts, open, full: BTreeMap::new() };
    report(7, "artifact-reduction ordering", secs(600), &mut || c7_ordering(&mut run));
    report(8, "sparse-view robustness", secs(1200), &mut || c8_sparse(&run));
    report(9, "preprocessing correctness", secs(60), &mut c9_preproc);
    report(10, "reproducibility", secs(600), &mut || c10_reproducible(scratch.path()));
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
