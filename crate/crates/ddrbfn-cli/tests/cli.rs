//! End-to-end tests of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;

use ddrbfn::data::{CsvFormat, load_trajectories, TrajectoryDataset};
use ddrbfn::{DiffeoNet, Sample};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddrbfn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const QUICK_CONFIG: &str = r#"
seed = 5

[base]
kind = "point_attractor"
scale = 0.1

[data]
normalize = "final_points"

[trainer]
iterations = 4
neurons_per_layer = 8

[trainer.solver]
max_steps = 40
"#;

fn spiral_outward_dataset() -> TrajectoryDataset {
    // r(t) = e^{0.1 t}: x^T xdot = 0.1 r^2 > 0 everywhere.
    let mut samples = Vec::new();
    for k in 0..120 {
        let t = 0.05 * k as f64;
        let r = (0.1 * t).exp();
        let (s, c) = t.sin_cos();
        samples.push(Sample {
            position: DVector::from_vec(vec![r * c, r * s]),
            velocity: DVector::from_vec(vec![
                0.1 * r * c - r * s,
                0.1 * r * s + r * c,
            ]),
            trajectory_id: 0,
            timestamp: t,
            attractor: false,
        });
    }
    TrajectoryDataset::new(2, samples, "spiral").unwrap()
}

#[test]
fn help_documents_every_subcommand() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["train", "eval", "simulate", "export-grid", "bench-lasa"] {
        assert!(text.contains(sub), "help is missing {sub}");
    }
    for sub in ["train", "eval", "simulate", "export-grid", "bench-lasa"] {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success(), "{sub} --help failed");
    }
}

#[test]
fn unknown_flags_are_hard_errors() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    write(&config, QUICK_CONFIG);
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        "/definitely/not/here.csv",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("/definitely/not/here.csv"), "stderr: {err}");
}

#[test]
fn train_writes_model_log_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    write(&config, QUICK_CONFIG);

    // Small inward-spiraling dataset with outward phases.
    let mut samples = Vec::new();
    for k in 0..80 {
        let t = 0.1 * k as f64;
        let r = 1.0 - 0.008 * k as f64;
        let (s, c) = t.sin_cos();
        samples.push(Sample {
            position: DVector::from_vec(vec![r * c + 0.3, r * s]),
            velocity: DVector::from_vec(vec![-r * s, r * c]),
            trajectory_id: 0,
            timestamp: t,
            attractor: false,
        });
    }
    let data_path = dir.path().join("data.csv");
    TrajectoryDataset::new(2, samples, "test")
        .unwrap()
        .write_csv(&data_path)
        .unwrap();

    let model_a = dir.path().join("a.json");
    let model_b = dir.path().join("b.json");
    for model in [&model_a, &model_b] {
        let out = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data_path.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "train failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        // Model re-validates on load.
        DiffeoNet::load(model).unwrap();
        assert!(model.with_extension("json.log.csv").exists() || {
            let mut name = model.file_name().unwrap().to_os_string();
            name.push(".log.csv");
            model.with_file_name(name).exists()
        } || model.with_extension("log.csv").exists());
        let mut mname = model.file_name().unwrap().to_os_string();
        mname.push(".manifest.json");
        assert!(model.with_file_name(mname).exists(), "manifest missing");
    }
    let a = std::fs::read(&model_a).unwrap();
    let b = std::fs::read(&model_b).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical models");
}

#[test]
fn eval_identity_on_outward_spiral_is_all_violations() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    // No normalization: evaluate in raw coordinates.
    write(
        &config,
        "[base]\nkind = \"point_attractor\"\nscale = 0.1\n",
    );
    let model = dir.path().join("identity.json");
    DiffeoNet::identity(2).save(&model).unwrap();
    let data_path = dir.path().join("spiral.csv");
    spiral_outward_dataset().write_csv(&data_path).unwrap();
    let report_path = dir.path().join("report.json");

    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--data",
        data_path.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("(100.00%)"), "stdout: {text}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["violation_rate"], serde_json::json!(100.0));
    assert_eq!(report["per_point"].as_array().unwrap().len(), 120);
}

#[test]
fn eval_reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    write(
        &config,
        "[base]\nkind = \"point_attractor\"\nscale = 0.1\n",
    );
    let model = dir.path().join("identity.json");
    DiffeoNet::identity(2).save(&model).unwrap();
    let data_path = dir.path().join("spiral.csv");
    spiral_outward_dataset().write_csv(&data_path).unwrap();

    let render = |name: &str| {
        let report = dir.path().join(name);
        let out = run(&[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--data",
            data_path.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        std::fs::read(report).unwrap()
    };
    assert_eq!(render("r1.json"), render("r2.json"));
}

#[test]
fn simulate_van_der_pol_produces_documented_counts() {
    let dir = tempfile::tempdir().unwrap();
    let system = dir.path().join("sys.toml");
    write(
        &system,
        r#"
kind = "van_der_pol"
mu = 1.0
step = 0.01
duration = 15.0
store_every = 15
cycle_samples = 20
corners = true
corner_value = 3.5
"#,
    );
    let out_csv = dir.path().join("vdp.csv");
    let out = run(&[
        "simulate",
        "--system",
        system.to_str().unwrap(),
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "simulate failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ds = load_trajectories(&[out_csv.as_path()], CsvFormat::Generic).unwrap();
    // 4 corner trajectories plus the cycle-sample pseudo-trajectory.
    assert_eq!(ds.trajectory_ids().len(), 5);
    let flagged: Vec<&Sample> = ds.samples().iter().filter(|s| s.attractor).collect();
    assert_eq!(flagged.len(), 20);

    // Round trip: the exported dataset reloads identically.
    let copy = dir.path().join("copy.csv");
    ds.write_csv(&copy).unwrap();
    let again = load_trajectories(&[copy.as_path()], CsvFormat::Generic).unwrap();
    assert_eq!(ds.samples(), again.samples());
}

#[test]
fn export_grid_on_identity_model_is_radially_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    write(
        &config,
        "[base]\nkind = \"point_attractor\"\nscale = 0.1\n",
    );
    let model = dir.path().join("identity.json");
    DiffeoNet::identity(2).save(&model).unwrap();
    let grid = dir.path().join("grid.csv");
    let out = run(&[
        "export-grid",
        "--model",
        model.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--bounds",
        "-1:1,-1:1",
        "--resolution",
        "9,9",
        "--out",
        grid.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "export-grid failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&grid).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 81);
    for k in 0..81 {
        let v = rows[k][2];
        let v_mirror = rows[80 - k][2];
        assert!((v - v_mirror).abs() <= 1e-12, "asymmetry at node {k}");
    }
}
