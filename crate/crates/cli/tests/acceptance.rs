//! Release criteria. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (bypassing output capture) and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dcaccel_cli::commands::{cmd_compare, cmd_density, cmd_validate};
use dcaccel_cli::pipeline::Context;
use dcaccel_cli::validate::{circular_law_density, unit_disk_density};
use dcaccel_cli::RunConfig;
use dcaccel_core::filter::{design_filter, DesignOptions};
use dcaccel_core::girko::{CeOptions, GeneralModel, ScalarModel};
use dcaccel_core::rng::rng_from_seed;
use dcaccel_core::spectral::{eigenvalues, empirical_density};
use dcaccel_core::{FilterKind, MatrixKind, Plane, SamplePoints, SbmConfig, SpectrumSample};
use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

fn report(n: u32, passed: bool, detail: &str, started: Instant) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict} {detail} ({:.1} s)\n", started.elapsed().as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Six populations of fifty with the reference block probabilities.
fn desk_config(trials: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.population_size = 50;
    cfg.sim.trials = trials;
    cfg
}

#[test]
fn criterion_1_circular_law() {
    let started = Instant::now();
    let plane = Plane::new(-1.5, 1.5, 41, -1.5, 1.5, 41).unwrap();
    let n = 1000;
    let girko = circular_law_density(n, &plane).unwrap();
    let ideal = unit_disk_density(&plane).unwrap();
    let l1_ideal = girko.l1_distance(&ideal, |_| true).unwrap();

    let mut rng = rng_from_seed(1000);
    let scale = 1.0 / (n as f64).sqrt();
    let x = DMatrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let eigs = eigenvalues(&x, MatrixKind::Xi, Some(1000)).unwrap();
    let sample = SpectrumSample::new(eigs.eigenvalues().to_vec(), Some(1000), MatrixKind::Xi);
    let (hist, _) = empirical_density(&sample, &plane).unwrap();
    let l1_hist = girko.l1_distance(&hist, |_| true).unwrap();

    let passed = l1_ideal <= 0.1 && l1_hist <= 0.12;
    report(1, passed, &format!("L1 to unit disk {l1_ideal:.4} (<= 0.1), L1 to N=1000 histogram {l1_hist:.4} (<= 0.12)"), started);
    assert!(passed);
}

#[test]
fn criterion_2_scalar_general_equivalence() {
    let started = Instant::now();
    let sbm = SbmConfig::two_level(6, 10, 0.05, 0.01, 1.0).unwrap();
    let scalar = ScalarModel::from_sbm(&sbm).unwrap();
    let general = GeneralModel::from_sbm(&sbm).unwrap();
    let opts = CeOptions { tol: 1e-13, max_iter: 100_000 };
    let (mut dm, mut spread) = (0.0f64, 0.0f64);
    for &u in &[1e-3, 1e-1, 10.0] {
        for &t in &[-0.3, 0.2, 0.9] {
            for &s in &[0.0, 0.2, 0.5] {
                dm = dm.max((scalar.m(u, t, s, &opts).unwrap() - general.m(u, t, s, &opts).unwrap()).abs());
                let sol = general.solve(u, t, s, &opts).unwrap();
                spread = spread.max(sol.c1.max() - sol.c1.min()).max(sol.c2.max() - sol.c2.min());
            }
        }
    }
    let passed = dm <= 1e-6 && spread <= 1e-8;
    report(2, passed, &format!("max |m_scalar - m_general| {dm:e} (<= 1e-6), C1/C2 spread {spread:e} (<= 1e-8)"), started);
    assert!(passed);
}

#[test]
fn criterion_3_desk_scale_densities() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(desk_config(200), dir.path().to_path_buf(), false).unwrap();
    let mc = cmd_density(&ctx).unwrap().monte_carlo.unwrap();
    let passed = mc.l1_distance <= 0.15 && mc.region_coverage >= 0.99;
    report(
        3,
        passed,
        &format!(
            "L1 outside kappa ball {:.4} (<= 0.15), region coverage {:.5} (>= 0.99), {} trials averaged",
            mc.l1_distance, mc.region_coverage, mc.averaged
        ),
        started,
    );
    assert!(passed);
}

#[test]
fn criterion_4_rate_ordering() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(desk_config(100), dir.path().to_path_buf(), false).unwrap();
    let table = cmd_compare(&ctx).unwrap().table;
    let rate = |k, d| table.get(k, d).map(|r| r.mean_rate);
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for d in 1..=6 {
        let (Some(triv), Some(prop), Some(orc)) = (rate(FilterKind::Trivial, d), rate(FilterKind::Proposed, d), rate(FilterKind::Oracle, d))
        else {
            failures.push(format!("d={d}: missing rows"));
            continue;
        };
        summary.push(format!("d={d} oracle {orc:.3} proposed {prop:.3} trivial {triv:.3}"));
        if !(orc <= prop && prop <= triv) {
            failures.push(format!("d={d}: ordering"));
        }
        if d >= 3 && prop - orc > 0.05 {
            failures.push(format!("d={d}: oracle gap {:.3}", prop - orc));
        }
        if d >= 3 && triv - prop < 0.2 {
            failures.push(format!("d={d}: gain over trivial {:.3}", triv - prop));
        }
        if rate(FilterKind::MeanSpectrum, d).is_some() != (d <= 2) {
            failures.push(format!("d={d}: mean-spectrum row presence"));
        }
    }
    let passed = failures.is_empty();
    report(4, passed, &format!("[{}] failures: [{}]", summary.join("; "), failures.join("; ")), started);
    assert!(passed);
}

fn design_eps(points: &[Complex<f64>], d: usize) -> f64 {
    let sp = SamplePoints::from_points(points, "oracle");
    design_filter(&sp, d, &DesignOptions::default()).unwrap().achieved_epsilon()
}

#[test]
fn criterion_5_minimax_oracles() {
    let started = Instant::now();
    let interval: Vec<Complex<f64>> = (0..=800).map(|k| Complex::new(0.1 + 0.5 * k as f64 / 800.0, 0.0)).collect();
    let cheb = design_eps(&interval, 3).sqrt();
    let x: f64 = 2.6;
    let expected = 1.0 / (4.0 * x.powi(3) - 3.0 * x);
    let cheb_err = (cheb - expected).abs() / expected;

    let mut disk = Vec::new();
    for ring in 1..=10 {
        let r = 0.3 * ring as f64 / 10.0;
        let count = 8 * ring;
        disk.extend((0..count).map(|k| Complex::from_polar(r, std::f64::consts::TAU * k as f64 / count as f64)));
    }
    let disk_eps = design_eps(&disk, 1);
    let disk_err = (disk_eps - 0.09).abs() / 0.09;

    let passed = cheb_err <= 0.01 && disk_err <= 0.02;
    report(
        5,
        passed,
        &format!("interval sqrt(eps) {cheb:.6} vs {expected:.6} (rel {cheb_err:.2e}), disk eps {disk_eps:.6} vs 0.09 (rel {disk_err:.2e})"),
        started,
    );
    assert!(passed);
}

#[test]
fn criterion_6_invariant_suite() {
    let started = Instant::now();
    let checks = cmd_validate(&RunConfig::default()).unwrap();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let passed = failed.is_empty();
    report(6, passed, &format!("{} checks, failed: {failed:?}", checks.len()), started);
    assert!(passed);
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_dcaccel")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn top_level_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn criterion_7_thread_independence() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_config(8);
    cfg.model.population_size = 20;
    cfg.model.theta_diag = 0.3;
    cfg.model.theta_off = 0.05;
    cfg.grid.n_t = 37;
    cfg.grid.n_s = 25;
    cfg.design.degrees = vec![1, 3];
    cfg.design.max_points = 300;
    let config = dir.path().join("config.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("out{threads}"));
        let out = out.to_str().unwrap();
        for cmd in ["density", "compare"] {
            run_cli(&[cmd, "--config", config.to_str().unwrap(), "--output", out, "--threads", threads]);
        }
        outputs.push(top_level_files(Path::new(out)));
    }
    let names: Vec<&String> = outputs[0].keys().collect();
    let differing: Vec<&String> = names.iter().copied().filter(|n| outputs[1].get(*n) != outputs[0].get(*n)).collect();
    let passed = differing.is_empty() && outputs[0].len() == outputs[1].len() && outputs[0].contains_key("comparison.csv");
    report(7, passed, &format!("{} files compared across 1 and 3 threads, differing: {differing:?}", names.len()), started);
    assert!(passed);
}
