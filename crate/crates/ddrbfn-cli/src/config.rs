//! TOML configuration files for training and evaluation runs.
//!
//! Config files carry everything a run needs beyond file paths, so that a
//! run is reproducible from the config plus the input data; a handful of
//! scalar flags (seed, iterations) may override config values.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use ddrbfn::data::TrajectoryDataset;
use ddrbfn::trainer::{CenterPolicy, InnerSolverConfig, SigmaPolicy, TrainConfig};
use ddrbfn::{BaseFunction, RiskMode};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub seed: u64,
    pub base: BaseConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub trainer: TrainerSection,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Data(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum BaseConfig {
    PointAttractor { scale: f64 },
    MultiPoint { attractors: Vec<Vec<f64>>, beta: f64 },
    LimitCycleRing { radius: f64, scale: f64 },
}

impl BaseConfig {
    pub fn build(&self) -> Result<BaseFunction, CliError> {
        let base = match self {
            BaseConfig::PointAttractor { scale } => BaseFunction::point_attractor(*scale),
            BaseConfig::MultiPoint { attractors, beta } => BaseFunction::multi_point(
                attractors
                    .iter()
                    .map(|a| DVector::from_row_slice(a))
                    .collect(),
                *beta,
            ),
            BaseConfig::LimitCycleRing { radius, scale } => {
                BaseFunction::limit_cycle_ring(*radius, *scale)
            }
        };
        base.map_err(|e| CliError::Usage(format!("bad base function: {e}")))
    }
}

/// How (and whether) to normalize loaded data.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(untagged)]
pub enum NormalizeSpec {
    /// "none" or "final_points".
    Mode(String),
    /// Explicit equilibrium point.
    Point(Vec<f64>),
    /// Fully explicit transform (e.g. copied from a training manifest).
    Explicit { offset: Vec<f64>, scale: Vec<f64> },
    #[default]
    #[serde(skip)]
    None,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default)]
    pub normalize: NormalizeSpec,
    /// Evenly subsample the training data to this many points.
    #[serde(default)]
    pub subsample: Option<usize>,
}

fn default_format() -> String {
    "generic_csv".into()
}

impl DataConfig {
    pub fn csv_format(&self) -> Result<ddrbfn::data::CsvFormat, CliError> {
        match self.format.as_str() {
            "generic_csv" => Ok(ddrbfn::data::CsvFormat::Generic),
            "lasa_export_csv" => Ok(ddrbfn::data::CsvFormat::LasaExport),
            other => Err(CliError::Usage(format!("unknown data format '{other}'"))),
        }
    }

    /// Applies the configured normalization, returning the dataset to use.
    pub fn apply_normalization(
        &self,
        dataset: TrajectoryDataset,
    ) -> Result<TrajectoryDataset, CliError> {
        match &self.normalize {
            NormalizeSpec::None => Ok(dataset),
            NormalizeSpec::Mode(mode) => match mode.as_str() {
                "none" => Ok(dataset),
                "final_points" => {
                    let eq = final_points_equilibrium(&dataset)?;
                    dataset.normalize(&eq).map_err(CliError::from)
                }
                other => Err(CliError::Usage(format!("unknown normalize mode '{other}'"))),
            },
            NormalizeSpec::Point(p) => {
                let eq = DVector::from_row_slice(p);
                dataset.normalize(&eq).map_err(CliError::from)
            }
            NormalizeSpec::Explicit { offset, scale } => {
                if offset.len() != dataset.dim() || scale.len() != dataset.dim() {
                    return Err(CliError::Usage(
                        "explicit normalization does not match data dimension".into(),
                    ));
                }
                let transform = ddrbfn::data::AffineTransform {
                    offset: DVector::from_row_slice(offset),
                    scale: DVector::from_row_slice(scale),
                };
                apply_explicit_transform(&dataset, &transform).map_err(CliError::from)
            }
        }
    }
}

/// Mean of the per-trajectory final points (the common target of
/// demonstrations that end at their equilibrium).
pub fn final_points_equilibrium(dataset: &TrajectoryDataset) -> Result<DVector<f64>, CliError> {
    let ids = dataset.trajectory_ids();
    let mut eq = DVector::zeros(dataset.dim());
    for id in &ids {
        let last = dataset
            .samples()
            .iter()
            .filter(|s| s.trajectory_id == *id)
            .last()
            .ok_or_else(|| CliError::Data("empty trajectory".into()))?;
        eq += &last.position;
    }
    Ok(eq / ids.len() as f64)
}

fn apply_explicit_transform(
    dataset: &TrajectoryDataset,
    transform: &ddrbfn::data::AffineTransform,
) -> ddrbfn::Result<TrajectoryDataset> {
    let samples: Vec<ddrbfn::Sample> = dataset
        .samples()
        .iter()
        .map(|s| ddrbfn::Sample {
            position: transform.apply_position(&s.position),
            velocity: transform.apply_velocity(&s.velocity),
            trajectory_id: s.trajectory_id,
            timestamp: s.timestamp,
            attractor: s.attractor,
        })
        .collect();
    TrajectoryDataset::new(dataset.dim(), samples, dataset.source().to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_neurons")]
    pub neurons_per_layer: usize,
    #[serde(default = "d_margin")]
    pub margin: f64,
    #[serde(default = "d_risk_mode")]
    pub risk_mode: String,
    #[serde(default = "d_hinge_margin")]
    pub hinge_margin: f64,
    #[serde(default = "d_stop_tol")]
    pub stop_tolerance: f64,
    #[serde(default = "d_center_policy")]
    pub center_policy: String,
    #[serde(default = "d_sigma_policy")]
    pub sigma_policy: String,
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    /// Row-major covariance for the fixed sigma policy.
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub solver: SolverSection,
}

impl Default for TrainerSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

fn d_horizon() -> usize {
    3
}
fn d_iterations() -> usize {
    60
}
fn d_neurons() -> usize {
    25
}
fn d_margin() -> f64 {
    ddrbfn::diffeo::DEFAULT_MARGIN
}
fn d_risk_mode() -> String {
    "hinge".into()
}
fn d_hinge_margin() -> f64 {
    ddrbfn::lyapunov::DEFAULT_HINGE_MARGIN
}
fn d_stop_tol() -> f64 {
    1e-6
}
fn d_center_policy() -> String {
    "kmeans".into()
}
fn d_sigma_policy() -> String {
    "nearest_neighbor".into()
}
fn d_kappa() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "d_step_scale")]
    pub step_scale: f64,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    #[serde(default = "d_solver_tol")]
    pub tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            step_scale: d_step_scale(),
            max_steps: d_max_steps(),
            tol: d_solver_tol(),
        }
    }
}

fn d_step_scale() -> f64 {
    0.5
}
fn d_max_steps() -> usize {
    200
}
fn d_solver_tol() -> f64 {
    1e-9
}

impl TrainerSection {
    pub fn build(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let risk_mode = match self.risk_mode.as_str() {
            "hinge" => RiskMode::Hinge,
            "raw" => RiskMode::Raw,
            other => return Err(CliError::Usage(format!("unknown risk mode '{other}'"))),
        };
        let center_policy = match self.center_policy.as_str() {
            "kmeans" => CenterPolicy::KMeans,
            "subsample" => CenterPolicy::Subsample,
            other => return Err(CliError::Usage(format!("unknown center policy '{other}'"))),
        };
        let sigma_policy = match self.sigma_policy.as_str() {
            "nearest_neighbor" => SigmaPolicy::NearestNeighbor { kappa: self.kappa },
            "fixed" => {
                let rows = self.sigma.as_ref().ok_or_else(|| {
                    CliError::Usage("sigma_policy = \"fixed\" requires a sigma matrix".into())
                })?;
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Usage("sigma matrix must be square".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                SigmaPolicy::Fixed(DMatrix::from_row_slice(n, n, &flat))
            }
            other => return Err(CliError::Usage(format!("unknown sigma policy '{other}'"))),
        };
        Ok(TrainConfig {
            horizon: self.horizon,
            iterations: self.iterations,
            neurons_per_layer: self.neurons_per_layer,
            sigma_policy,
            center_policy,
            solver: InnerSolverConfig {
                step_scale: self.solver.step_scale,
                max_steps: self.solver.max_steps,
                tol: self.solver.tol,
            },
            risk_mode,
            hinge_margin: self.hinge_margin,
            margin: self.margin,
            seed,
            stop_tolerance: self.stop_tolerance,
        })
    }
}

/// System description for `simulate` and the `export-grid` field overlay.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: String,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub rotation: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default = "d_store_every")]
    pub store_every: usize,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    /// Van der Pol: number of equally spaced limit-cycle samples to add.
    #[serde(default)]
    pub cycle_samples: Option<usize>,
    /// Van der Pol: add trajectories starting in the state-space corners.
    #[serde(default)]
    pub corners: bool,
    #[serde(default = "d_corner_value")]
    pub corner_value: f64,
    /// Two-attractor: use the six canonical initial positions.
    #[serde(default)]
    pub canonical_inits: bool,
}

fn d_store_every() -> usize {
    1
}
fn d_corner_value() -> f64 {
    3.5
}

impl SystemConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Data(format!("cannot read system spec {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad system spec {}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<ddrbfn::data::SyntheticSystem, CliError> {
        let mut system = match self.kind.as_str() {
            "van_der_pol" => ddrbfn::data::SyntheticSystem::van_der_pol(self.mu.unwrap_or(1.0)),
            "two_attractor" => {
                ddrbfn::data::SyntheticSystem::two_attractor(self.rotation.unwrap_or(0.3))
            }
            "warped_linear" => {
                let bench = ddrbfn::data::make_warped_linear(self.seed.unwrap_or(0))
                    .map_err(CliError::from)?;
                bench.system
            }
            other => return Err(CliError::Usage(format!("unknown system kind '{other}'"))),
        };
        if let Some(step) = self.step {
            system.step = step;
        }
        if let Some(duration) = self.duration {
            system.duration = duration;
        }
        Ok(system)
    }

    pub fn initial_states(&self) -> Result<Vec<DVector<f64>>, CliError> {
        let mut states: Vec<DVector<f64>> = self
            .initial_states
            .iter()
            .map(|p| DVector::from_row_slice(p))
            .collect();
        if self.canonical_inits && self.kind == "two_attractor" {
            states.extend(ddrbfn::data::SyntheticSystem::two_attractor_initial_states());
        }
        if self.corners {
            let c = self.corner_value;
            for p in [[c, c], [-c, c], [c, -c], [-c, -c]] {
                states.push(DVector::from_row_slice(&p));
            }
        }
        if states.is_empty() {
            return Err(CliError::Usage(
                "system spec defines no initial states".into(),
            ));
        }
        Ok(states)
    }
}
