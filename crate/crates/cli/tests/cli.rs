use std::process::{Command, Output};

use dcaccel_core::consensus::ComparisonTable;
use dcaccel_core::filter::read_boundary_csv;
use dcaccel_core::{DensityGrid, FilterKind};

fn dcaccel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcaccel")).args(args).output().unwrap()
}

const SMALL: &str = r#"
[model]
population_size = 20
theta_diag = 0.3
theta_off = 0.05

[grid]
n_t = 37
n_s = 25

[design]
degrees = [1, 2, 4]
max_points = 300

[sim]
trials = 3
"#;

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nunknown_key = 3\n").unwrap();
    let out = dcaccel(&["density", "--config", cfg.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = dcaccel(&["density", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_outputs_parse_and_rerun_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let args = ["compare", "--config", cfg.to_str().unwrap(), "--output", out_dir.to_str().unwrap()];
    let first = dcaccel(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let open = |name: &str| std::io::BufReader::new(std::fs::File::open(out_dir.join(name)).unwrap());

    let table = ComparisonTable::read_csv(open("comparison.csv")).unwrap();
    for d in [1, 2, 4] {
        for kind in [FilterKind::Trivial, FilterKind::Proposed, FilterKind::Oracle] {
            assert!(table.get(kind, d).is_some(), "{kind} d={d}");
        }
    }
    assert!(table.get(FilterKind::MeanSpectrum, 4).is_none());
    for d in [1, 2, 4] {
        let f: serde_json::Value = serde_json::from_reader(open(&format!("filter_d{d}.json"))).unwrap();
        let sum: f64 = f["coefficients"].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    assert!(out_dir.join("sample_points.csv").is_file());

    let before = std::fs::read(out_dir.join("comparison.csv")).unwrap();
    let second = dcaccel(&args);
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hit"));
    assert_eq!(before, std::fs::read(out_dir.join("comparison.csv")).unwrap());

    let density = dcaccel(&["density", "--config", cfg.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
    assert!(density.status.success());
    let girko = DensityGrid::read_csv(open("girko_density.csv")).unwrap();
    let empirical = DensityGrid::read_csv(open("empirical_density.csv")).unwrap();
    assert_eq!(girko.plane(), empirical.plane());
    assert!(!read_boundary_csv(open("region_boundary.csv")).unwrap().is_empty());
    let meta: serde_json::Value = serde_json::from_reader(open("metadata.json")).unwrap();
    assert!(meta["monte_carlo"]["l1_distance"].as_f64().is_some());
}

#[test]
fn zero_trials_writes_only_deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL.replace("trials = 3", "trials = 0")).unwrap();
    let out_dir = dir.path().join("out");
    let out = dcaccel(&["density", "--config", cfg.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("girko_density.csv").is_file());
    assert!(!out_dir.join("empirical_density.csv").exists());
    let meta: serde_json::Value = serde_json::from_reader(std::fs::File::open(out_dir.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["monte_carlo"].is_null());
}

#[test]
fn empty_region_suggests_adjustment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("{SMALL}\n[region]\ntau = 1e9\n")).unwrap();
    let out = dcaccel(&["design", "--config", cfg.to_str().unwrap(), "--output", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));
}
