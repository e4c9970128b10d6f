//! Command-line front end: train, evaluate, simulate, export, benchmark.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use ddrbfn::data::{load_trajectories, shapes, simulate_strided, TrajectoryDataset};
use ddrbfn::lyapunov::DEFAULT_EXCLUSION_RADIUS;
use ddrbfn::trainer::train;
use ddrbfn::{DiffeoNet, LyapunovCandidate};

use config::{FileConfig, SystemConfig};
use manifest::{NormalizationRecord, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ddrbfn::Error> for CliError {
    fn from(e: ddrbfn::Error) -> Self {
        match e {
            ddrbfn::Error::Numeric(m) => CliError::Numeric(m),
            ddrbfn::Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// Learn geometrically-constrained Lyapunov functions from trajectory data.
#[derive(Parser)]
#[command(name = "ddrbfn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a diffeomorphic Lyapunov candidate on trajectory data.
    Train {
        /// Training configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Input CSV file(s); repeatable.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Output model file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config iteration cap.
        #[arg(long)]
        iterations: Option<usize>,
        /// Training log path (defaults to <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a model's violation rate on a dataset.
    Eval {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Config providing the base function and normalization.
        #[arg(long)]
        config: PathBuf,
        /// Input CSV file(s); repeatable.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Exclusion radius around the attractor set.
        #[arg(long, default_value_t = DEFAULT_EXCLUSION_RADIUS)]
        exclusion_radius: f64,
        /// Machine-readable report path (JSON); also printed as text.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate a synthetic benchmark system and write the dataset CSV.
    Simulate {
        /// System specification (TOML).
        #[arg(long)]
        system: PathBuf,
        /// Output dataset CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a regular grid and write a plot-ready table.
    ExportGrid {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Config providing the base function.
        #[arg(long)]
        config: PathBuf,
        /// Per-axis bounds, e.g. "-1:1,-1:1".
        #[arg(long, allow_hyphen_values = true)]
        bounds: String,
        /// Per-axis node counts, e.g. "80,80".
        #[arg(long)]
        resolution: String,
        /// Optional system spec whose field is used for a Vdot column.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Output grid file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train/evaluate protocol on handwriting shapes over several seeds.
    BenchLasa {
        /// Config providing base function, trainer settings, normalization.
        #[arg(long)]
        config: PathBuf,
        /// Shape CSV file(s) (7 demonstrations); repeatable.
        #[arg(long)]
        data: Vec<PathBuf>,
        /// Use the built-in shape generator instead of files:
        /// angle | c_shape | z_shape | sine.
        #[arg(long)]
        synthetic: Option<String>,
        /// Number of seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Trajectory id of the training demonstration.
        #[arg(long)]
        train_demo: Option<u64>,
        /// Training subset size drawn evenly from that demonstration.
        #[arg(long, default_value_t = 200)]
        subset: usize,
        /// Report path (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            iterations,
            log,
        } => cmd_train(&config, &data, &out, seed, iterations, log.as_deref()),
        Command::Eval {
            model,
            config,
            data,
            exclusion_radius,
            out,
        } => cmd_eval(&model, &config, &data, exclusion_radius, out.as_deref()),
        Command::Simulate { system, out } => cmd_simulate(&system, &out),
        Command::ExportGrid {
            model,
            config,
            bounds,
            resolution,
            system,
            out,
        } => cmd_export_grid(&model, &config, &bounds, &resolution, system.as_deref(), &out),
        Command::BenchLasa {
            config,
            data,
            synthetic,
            seeds,
            train_demo,
            subset,
            out,
        } => cmd_bench_lasa(
            &config,
            &data,
            synthetic.as_deref(),
            seeds,
            train_demo,
            subset,
            out.as_deref(),
        ),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}

fn load_data(
    paths: &[PathBuf],
    format: ddrbfn::data::CsvFormat,
) -> Result<TrajectoryDataset, CliError> {
    let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    load_trajectories(&refs, format).map_err(|e| CliError::Data(e.to_string()))
}

fn normalization_record(ds: &TrajectoryDataset) -> Option<NormalizationRecord> {
    ds.normalization().map(|t| NormalizationRecord {
        offset: t.offset.iter().copied().collect(),
        scale: t.scale.iter().copied().collect(),
    })
}

fn cmd_train(
    config_path: &Path,
    data_paths: &[PathBuf],
    out: &Path,
    seed_override: Option<u64>,
    iterations_override: Option<usize>,
    log_path: Option<&Path>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let file_config = FileConfig::load(config_path)?;
    let seed = seed_override.unwrap_or(file_config.seed);
    let base = file_config.base.build()?;
    let mut train_config = file_config.trainer.build(seed)?;
    if let Some(iters) = iterations_override {
        train_config.iterations = iters;
    }

    let raw = load_data(data_paths, file_config.data.csv_format()?)?;
    let mut dataset = file_config.data.apply_normalization(raw)?;
    if let Some(count) = file_config.data.subsample {
        dataset = dataset.subsample_evenly(count)?;
    }

    let (net, log) = train(&train_config, &base, &dataset)?;
    net.save(out).map_err(|e| CliError::Data(e.to_string()))?;
    let log_file = log_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.with_extension("log.csv"));
    std::fs::write(&log_file, log.to_text())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", log_file.display())))?;

    let mut manifest = RunManifest::new("train");
    manifest.seed = Some(seed);
    manifest.record_config(config_path)?;
    for p in data_paths {
        manifest.record_input(p)?;
    }
    manifest.record_output(out);
    manifest.record_output(&log_file);
    manifest.normalization = normalization_record(&dataset);
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write_next_to(out)?;

    let cand = LyapunovCandidate::new(base, net)?;
    let report = cand.violation_rate(&dataset, DEFAULT_EXCLUSION_RADIUS)?;
    println!(
        "trained {} layers in {:.1}s; training {report}",
        cand.net().depth(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalReport {
    total_points: usize,
    violating_points: usize,
    violation_rate: f64,
    dd_min: f64,
    dd_mean: f64,
    dd_max: f64,
    exclusion_radius: f64,
    per_point: Vec<PerPoint>,
}

#[derive(serde::Serialize)]
struct PerPoint {
    traj: u64,
    t: f64,
    dd: f64,
    excluded: bool,
}

fn cmd_eval(
    model_path: &Path,
    config_path: &Path,
    data_paths: &[PathBuf],
    exclusion_radius: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let file_config = FileConfig::load(config_path)?;
    let base = file_config.base.build()?;
    let net = DiffeoNet::load(model_path).map_err(|e| CliError::Data(e.to_string()))?;
    let cand = LyapunovCandidate::new(base, net)?;

    let raw = load_data(data_paths, file_config.data.csv_format()?)?;
    let dataset = file_config.data.apply_normalization(raw)?;

    let report = cand.violation_rate(&dataset, exclusion_radius)?;
    let derivatives = cand.per_sample_derivatives(&dataset, exclusion_radius)?;
    println!("{report}");

    if let Some(out_path) = out {
        let per_point: Vec<PerPoint> = dataset
            .samples()
            .iter()
            .zip(&derivatives)
            .map(|(s, (dd, excluded))| PerPoint {
                traj: s.trajectory_id,
                t: s.timestamp,
                dd: *dd,
                excluded: *excluded,
            })
            .collect();
        let payload = EvalReport {
            total_points: report.total_points,
            violating_points: report.violating_points,
            violation_rate: report.violation_rate,
            dd_min: report.dd_min,
            dd_mean: report.dd_mean,
            dd_max: report.dd_max,
            exclusion_radius,
            per_point,
        };
        let text = serde_json::to_string_pretty(&payload)
            .map_err(|e| CliError::Data(format!("report serialization failed: {e}")))?;
        std::fs::write(out_path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out_path.display())))?;

        let mut manifest = RunManifest::new("eval");
        manifest.record_config(config_path)?;
        manifest.record_input(model_path)?;
        for p in data_paths {
            manifest.record_input(p)?;
        }
        manifest.record_output(out_path);
        manifest.normalization = normalization_record(&dataset);
        manifest.wall_time_s = started.elapsed().as_secs_f64();
        manifest.write_next_to(out_path)?;
    }
    Ok(())
}

fn cmd_simulate(system_path: &Path, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = SystemConfig::load(system_path)?;
    let system = spec.build()?;
    let inits = spec.initial_states()?;
    let duration = spec.duration.unwrap_or(system.duration);
    let mut dataset = simulate_strided(&system, &inits, duration, spec.store_every)
        .map_err(CliError::from)?;

    if let Some(count) = spec.cycle_samples {
        if spec.kind != "van_der_pol" {
            return Err(CliError::Usage(
                "cycle_samples is only meaningful for van_der_pol".into(),
            ));
        }
        let next_id = dataset.trajectory_ids().last().copied().unwrap_or(0) + 1;
        let (cycle, _) = ddrbfn::data::sample_limit_cycle(&system, count, next_id)?;
        let mut samples = dataset.samples().to_vec();
        samples.extend(cycle);
        dataset = TrajectoryDataset::new(dataset.dim(), samples, dataset.source().to_string())?;
    }

    dataset
        .write_csv(out)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut manifest = RunManifest::new("simulate");
    manifest.record_config(system_path)?;
    manifest.record_output(out);
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write_next_to(out)?;
    println!(
        "wrote {} samples over {} trajectories",
        dataset.len(),
        dataset.trajectory_ids().len()
    );
    Ok(())
}

fn parse_bounds(text: &str) -> Result<Vec<(f64, f64)>, CliError> {
    text.split(',')
        .map(|axis| {
            let parts: Vec<&str> = axis.split(':').collect();
            if parts.len() != 2 {
                return Err(CliError::Usage(format!(
                    "bad bounds component '{axis}', expected lo:hi"
                )));
            }
            let lo: f64 = parts[0]
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad bound '{}'", parts[0])))?;
            let hi: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad bound '{}'", parts[1])))?;
            Ok((lo, hi))
        })
        .collect()
}

fn parse_resolution(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad resolution '{part}'")))
        })
        .collect()
}

fn cmd_export_grid(
    model_path: &Path,
    config_path: &Path,
    bounds_text: &str,
    resolution_text: &str,
    system_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let file_config = FileConfig::load(config_path)?;
    let base = file_config.base.build()?;
    let net = DiffeoNet::load(model_path).map_err(|e| CliError::Data(e.to_string()))?;
    let cand = LyapunovCandidate::new(base, net)?;
    let bounds = parse_bounds(bounds_text)?;
    let resolution = parse_resolution(resolution_text)?;

    let system = system_path.map(SystemConfig::load).transpose()?;
    let built = system.as_ref().map(|s| s.build()).transpose()?;
    let field = built
        .as_ref()
        .map(|sys| move |x: &DVector<f64>| sys.field(x));

    let mut buffer = Vec::new();
    let field_ref: Option<&dyn Fn(&DVector<f64>) -> ddrbfn::Result<DVector<f64>>> = field
        .as_ref()
        .map(|f| f as &dyn Fn(&DVector<f64>) -> ddrbfn::Result<DVector<f64>>);
    cand.export_grid(&bounds, &resolution, field_ref, &mut buffer)?;
    std::fs::write(out, buffer)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;

    let mut manifest = RunManifest::new("export-grid");
    manifest.record_config(config_path)?;
    manifest.record_input(model_path)?;
    if let Some(p) = system_path {
        manifest.record_input(p)?;
    }
    manifest.record_output(out);
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write_next_to(out)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct BenchReport {
    source: String,
    train_demo: u64,
    subset: usize,
    identity_violation_rate: f64,
    per_seed: Vec<BenchSeed>,
    mean: f64,
    std: f64,
}

#[derive(serde::Serialize)]
struct BenchSeed {
    seed: u64,
    violation_rate: f64,
    depth: usize,
    train_violation_rate: f64,
}

/// Documented protocol: normalize the whole shape once, train on an even
/// subset of one demonstration, evaluate generalization on the remaining
/// demonstrations, repeat over seeds.
fn cmd_bench_lasa(
    config_path: &Path,
    data_paths: &[PathBuf],
    synthetic: Option<&str>,
    seeds: u64,
    train_demo: Option<u64>,
    subset: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let file_config = FileConfig::load(config_path)?;
    let base = file_config.base.build()?;

    let (raw, source) = match (synthetic, data_paths.is_empty()) {
        (Some(name), _) => {
            let shape = shapes::Shape::parse(name)
                .ok_or_else(|| CliError::Usage(format!("unknown shape '{name}'")))?;
            let ds = shapes::generate(shape, 7, 1000, 7).map_err(CliError::from)?;
            (ds, format!("synthetic:{}", shape.name()))
        }
        (None, false) => {
            let ds = load_data(data_paths, file_config.data.csv_format()?)?;
            let names: Vec<String> =
                data_paths.iter().map(|p| p.display().to_string()).collect();
            (ds, names.join(";"))
        }
        (None, true) => {
            return Err(CliError::Usage(
                "bench-lasa needs --data files or --synthetic <shape>".into(),
            ));
        }
    };

    // One normalization for the whole shape, then the train/eval split.
    let equilibrium = config::final_points_equilibrium(&raw)?;
    let dataset = raw.normalize(&equilibrium).map_err(CliError::from)?;
    let ids = dataset.trajectory_ids();
    if ids.len() < 2 {
        return Err(CliError::Data(
            "benchmark needs at least two demonstrations".into(),
        ));
    }
    let train_id = train_demo.unwrap_or(ids[0]);
    if !ids.contains(&train_id) {
        return Err(CliError::Usage(format!(
            "train demonstration {train_id} not present (ids: {ids:?})"
        )));
    }
    let eval_ids: Vec<u64> = ids.iter().copied().filter(|id| *id != train_id).collect();
    let train_set = dataset
        .filter_trajectories(&[train_id])?
        .subsample_evenly(subset)?;
    let eval_set = dataset.filter_trajectories(&eval_ids)?;

    let identity = LyapunovCandidate::identity(base.clone(), dataset.dim())?;
    let identity_rate = identity
        .violation_rate(&eval_set, DEFAULT_EXCLUSION_RADIUS)?
        .violation_rate;

    let mut per_seed = Vec::new();
    for s in 0..seeds {
        let seed = file_config.seed + s;
        let train_config = file_config.trainer.build(seed)?;
        let (net, _) = train(&train_config, &base, &train_set)?;
        let cand = LyapunovCandidate::new(base.clone(), net)?;
        let train_rate = cand
            .violation_rate(&train_set, DEFAULT_EXCLUSION_RADIUS)?
            .violation_rate;
        let rate = cand
            .violation_rate(&eval_set, DEFAULT_EXCLUSION_RADIUS)?
            .violation_rate;
        println!(
            "seed {seed}: eval violation {rate:.2}% (train {train_rate:.2}%, depth {})",
            cand.net().depth()
        );
        per_seed.push(BenchSeed {
            seed,
            violation_rate: rate,
            depth: cand.net().depth(),
            train_violation_rate: train_rate,
        });
    }

    let rates: Vec<f64> = per_seed.iter().map(|p| p.violation_rate).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let std = if rates.len() > 1 {
        (rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (rates.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    println!("{source}: {mean:.2} ± {std:.2} (identity {identity_rate:.2})");

    if let Some(out_path) = out {
        let report = BenchReport {
            source,
            train_demo: train_id,
            subset,
            identity_violation_rate: identity_rate,
            per_seed,
            mean,
            std,
        };
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Data(format!("report serialization failed: {e}")))?;
        std::fs::write(out_path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out_path.display())))?;
        let mut manifest = RunManifest::new("bench-lasa");
        manifest.seed = Some(file_config.seed);
        manifest.record_config(config_path)?;
        for p in data_paths {
            manifest.record_input(p)?;
        }
        manifest.record_output(out_path);
        manifest.wall_time_s = 0.0;
        manifest.write_next_to(out_path)?;
    }
    Ok(())
}
