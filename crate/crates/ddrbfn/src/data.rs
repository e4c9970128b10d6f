//! Trajectory datasets and synthetic benchmark systems.
//!
//! Ingestion covers a small CSV schema (`traj_id,t,x1..xn[,xd1..xdn][,attractor]`)
//! shared by generic exports and LASA handwriting conversions, with
//! finite-difference velocities when a file carries none. Preprocessing
//! shifts a designated equilibrium to the origin and scales each axis into
//! `[-1, 1]` while transforming velocities consistently.
//!
//! Three families of synthetic systems feed the benchmarks, all integrated
//! with fixed-step RK4 and exact (analytic) velocities at the stored states:
//! a warped-linear system built so that a diffeomorphic Lyapunov function
//! exists by construction, a two-well gradient flow with a small solenoidal
//! twist, and the Van der Pol oscillator with its limit cycle sampler.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use crate::diffeo::{DiffeoNet, RbfLayer, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// One observation `(x, xdot)` with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub trajectory_id: u64,
    pub timestamp: f64,
    /// Marks samples lying on the attractor set (e.g. limit-cycle points);
    /// they enter training as stationarity terms, not descent terms.
    pub attractor: bool,
}

/// Diagonal affine change of coordinates `x' = scale ⊙ (x - offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub offset: DVector<f64>,
    pub scale: DVector<f64>,
}

impl AffineTransform {
    pub fn apply_position(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.offset).component_mul(&self.scale)
    }

    pub fn apply_velocity(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_mul(&self.scale)
    }

    pub fn invert_position(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_div(&self.scale) + &self.offset
    }

    pub fn invert_velocity(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_div(&self.scale)
    }
}

/// Samples `{(x, xdot)}` grouped into trajectories.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    dim: usize,
    samples: Vec<Sample>,
    normalization: Option<AffineTransform>,
    source: String,
}

impl TrajectoryDataset {
    /// Validates finiteness, dimension agreement, and strictly increasing
    /// timestamps within each trajectory.
    pub fn new(dim: usize, samples: Vec<Sample>, source: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dataset dimension must be positive".into()));
        }
        let mut last_t: BTreeMap<u64, f64> = BTreeMap::new();
        for (idx, s) in samples.iter().enumerate() {
            if s.position.len() != dim || s.velocity.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "sample {idx} has dimension {}x{}, expected {dim}",
                    s.position.len(),
                    s.velocity.len()
                )));
            }
            if s.position.iter().any(|v| !v.is_finite())
                || s.velocity.iter().any(|v| !v.is_finite())
                || !s.timestamp.is_finite()
            {
                return Err(Error::InvalidArgument(format!("sample {idx} is not finite")));
            }
            if let Some(prev) = last_t.get(&s.trajectory_id) {
                if s.timestamp <= *prev {
                    return Err(Error::Validation(format!(
                        "timestamps not strictly increasing in trajectory {} at t = {}",
                        s.trajectory_id, s.timestamp
                    )));
                }
            }
            last_t.insert(s.trajectory_id, s.timestamp);
        }
        Ok(Self {
            dim,
            samples,
            normalization: None,
            source: source.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn normalization(&self) -> Option<&AffineTransform> {
        self.normalization.as_ref()
    }

    /// Trajectory ids in ascending order.
    pub fn trajectory_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = Vec::new();
        for s in &self.samples {
            if !ids.contains(&s.trajectory_id) {
                ids.push(s.trajectory_id);
            }
        }
        ids.sort_unstable();
        ids
    }

    /// Keeps only the given trajectories (sample order preserved).
    pub fn filter_trajectories(&self, ids: &[u64]) -> Result<Self> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| ids.contains(&s.trajectory_id))
            .cloned()
            .collect();
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "no samples left after trajectory filter".into(),
            ));
        }
        let mut out = Self::new(self.dim, samples, self.source.clone())?;
        out.normalization = self.normalization.clone();
        Ok(out)
    }

    /// Evenly spaced subsample, distributed over trajectories proportionally
    /// to their length. Deterministic.
    pub fn subsample_evenly(&self, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("subsample count must be positive".into()));
        }
        if count >= self.len() {
            return Ok(self.clone());
        }
        let ids = self.trajectory_ids();
        let total = self.len();
        let mut kept: Vec<Sample> = Vec::with_capacity(count);
        for id in ids {
            let traj: Vec<&Sample> = self
                .samples
                .iter()
                .filter(|s| s.trajectory_id == id)
                .collect();
            let share = ((count * traj.len()) as f64 / total as f64).round().max(1.0) as usize;
            let share = share.min(traj.len());
            for k in 0..share {
                let idx = if share == 1 {
                    0
                } else {
                    (k as f64 * (traj.len() - 1) as f64 / (share - 1) as f64).round() as usize
                };
                kept.push(traj[idx].clone());
            }
        }
        let mut out = Self::new(self.dim, kept, self.source.clone())?;
        out.normalization = self.normalization.clone();
        Ok(out)
    }

    /// Shifts `equilibrium` to the origin and scales each axis so the data
    /// bounding box fits `[-1, 1]`; velocities are scaled consistently. The
    /// transform is stored for inverse mapping.
    pub fn normalize(&self, equilibrium: &DVector<f64>) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(Error::InvalidArgument("dataset is already normalized".into()));
        }
        if equilibrium.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "equilibrium has dimension {}, expected {}",
                equilibrium.len(),
                self.dim
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("cannot normalize an empty dataset".into()));
        }
        let mut extent = DVector::<f64>::zeros(self.dim);
        for s in &self.samples {
            for j in 0..self.dim {
                extent[j] = extent[j].max((s.position[j] - equilibrium[j]).abs());
            }
        }
        let scale = DVector::from_fn(self.dim, |j, _| {
            if extent[j] > 0.0 {
                1.0 / extent[j]
            } else {
                1.0
            }
        });
        let transform = AffineTransform {
            offset: equilibrium.clone(),
            scale,
        };
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .map(|s| Sample {
                position: transform.apply_position(&s.position),
                velocity: transform.apply_velocity(&s.velocity),
                trajectory_id: s.trajectory_id,
                timestamp: s.timestamp,
                attractor: s.attractor,
            })
            .collect();
        let mut out = Self::new(self.dim, samples, self.source.clone())?;
        out.normalization = Some(transform);
        Ok(out)
    }

    /// Undoes a stored normalization.
    pub fn denormalize(&self) -> Result<Self> {
        let transform = self.normalization.as_ref().ok_or_else(|| {
            Error::InvalidArgument("dataset carries no normalization to undo".into())
        })?;
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .map(|s| Sample {
                position: transform.invert_position(&s.position),
                velocity: transform.invert_velocity(&s.velocity),
                trajectory_id: s.trajectory_id,
                timestamp: s.timestamp,
                attractor: s.attractor,
            })
            .collect();
        Self::new(self.dim, samples, self.source.clone())
    }

    /// Writes the dataset in the CSV schema (velocities and attractor flags
    /// always included). Floats use the shortest round-trip representation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("traj_id,t");
        for j in 1..=self.dim {
            out.push_str(&format!(",x{j}"));
        }
        for j in 1..=self.dim {
            out.push_str(&format!(",xd{j}"));
        }
        out.push_str(",attractor\n");
        for s in &self.samples {
            out.push_str(&format!("{},{}", s.trajectory_id, s.timestamp));
            for v in s.position.iter() {
                out.push_str(&format!(",{v}"));
            }
            for v in s.velocity.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(if s.attractor { ",1\n" } else { ",0\n" });
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// CSV flavors accepted by [`load_trajectories`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvFormat {
    /// Rows as stored; velocities computed when absent.
    Generic,
    /// Same schema, produced by converting LASA handwriting recordings.
    /// Demonstrations end at the target: the final sample of each trajectory
    /// gets zero velocity and an attractor-adjacent flag.
    LasaExport,
}

struct ParsedHeader {
    dim: usize,
    has_velocities: bool,
    has_attractor: bool,
}

fn parse_header(path: &str, line: &str) -> Result<ParsedHeader> {
    let fail = |msg: String| Error::Parse {
        path: path.to_string(),
        line: 1,
        message: msg,
    };
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "traj_id" || cols[1] != "t" {
        return Err(fail("header must start with traj_id,t,x1,...".into()));
    }
    let mut idx = 2;
    let mut dim = 0;
    while idx < cols.len() && cols[idx] == format!("x{}", dim + 1) {
        dim += 1;
        idx += 1;
    }
    if dim == 0 {
        return Err(fail("no position columns x1..xn found".into()));
    }
    let mut has_velocities = false;
    if idx < cols.len() && cols[idx] == "xd1" {
        for j in 1..=dim {
            if idx >= cols.len() || cols[idx] != format!("xd{j}") {
                return Err(fail(format!("expected velocity column xd{j}")));
            }
            idx += 1;
        }
        has_velocities = true;
    }
    let mut has_attractor = false;
    if idx < cols.len() && cols[idx] == "attractor" {
        has_attractor = true;
        idx += 1;
    }
    if idx != cols.len() {
        return Err(fail(format!("unexpected trailing column '{}'", cols[idx])));
    }
    Ok(ParsedHeader {
        dim,
        has_velocities,
        has_attractor,
    })
}

/// Loads one or more CSV files into a single dataset.
///
/// Dimensions must agree across files and trajectory ids must not repeat
/// across files. Files without velocity columns get central-difference
/// velocities per trajectory.
pub fn load_trajectories(paths: &[&Path], format: CsvFormat) -> Result<TrajectoryDataset> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no input files given".into()));
    }
    let mut dim: Option<usize> = None;
    let mut samples: Vec<Sample> = Vec::new();
    let mut seen_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut sources: Vec<String> = Vec::new();

    for (file_idx, path) in paths.iter().enumerate() {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read data file {display}: {e}"))
        })?;
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: 1,
            message: "file is empty".into(),
        })?;
        let header = parse_header(&display, header_line)?;
        match dim {
            None => dim = Some(header.dim),
            Some(d) if d != header.dim => {
                return Err(Error::Validation(format!(
                    "dimension mismatch: {display} has n = {}, previous files n = {d}",
                    header.dim
                )));
            }
            _ => {}
        }
        let n = header.dim;

        // Raw rows per trajectory, in order of appearance.
        let mut file_rows: Vec<(u64, f64, DVector<f64>, Option<DVector<f64>>, bool)> = Vec::new();
        for (lineno, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                message: msg,
            };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let expected =
                2 + n + if header.has_velocities { n } else { 0 }
                    + if header.has_attractor { 1 } else { 0 };
            if cols.len() != expected {
                return Err(fail(format!(
                    "expected {expected} columns, found {}",
                    cols.len()
                )));
            }
            let id: u64 = cols[0]
                .parse()
                .map_err(|_| fail(format!("bad trajectory id '{}'", cols[0])))?;
            let parse_float = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| fail(format!("bad number '{s}'")))?;
                if !v.is_finite() {
                    return Err(fail(format!("non-finite number '{s}'")));
                }
                Ok(v)
            };
            let t = parse_float(cols[1])?;
            let mut pos = DVector::zeros(n);
            for j in 0..n {
                pos[j] = parse_float(cols[2 + j])?;
            }
            let vel = if header.has_velocities {
                let mut v = DVector::zeros(n);
                for j in 0..n {
                    v[j] = parse_float(cols[2 + n + j])?;
                }
                Some(v)
            } else {
                None
            };
            let attractor = if header.has_attractor {
                match *cols.last().expect("column count checked") {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    other => return Err(fail(format!("bad attractor flag '{other}'"))),
                }
            } else {
                false
            };
            file_rows.push((id, t, pos, vel, attractor));
        }

        // Reject trajectory ids that already appeared in another file.
        for (id, _, _, _, _) in &file_rows {
            if let Some(owner) = seen_ids.get(id) {
                if *owner != file_idx {
                    return Err(Error::Validation(format!(
                        "trajectory id {id} appears in more than one input file"
                    )));
                }
            } else {
                seen_ids.insert(*id, file_idx);
            }
        }

        // Fill velocities per trajectory when the file has none.
        if header.has_velocities {
            for (id, t, pos, vel, attractor) in file_rows {
                samples.push(Sample {
                    position: pos,
                    velocity: vel.expect("velocities present"),
                    trajectory_id: id,
                    timestamp: t,
                    attractor,
                });
            }
        } else {
            let mut order: Vec<u64> = Vec::new();
            let mut grouped: BTreeMap<u64, Vec<(f64, DVector<f64>, bool)>> = BTreeMap::new();
            for (id, t, pos, _, attractor) in file_rows {
                if !grouped.contains_key(&id) {
                    order.push(id);
                }
                grouped.entry(id).or_default().push((t, pos, attractor));
            }
            for id in order {
                let rows = grouped.remove(&id).expect("grouped by construction");
                let timestamps: Vec<f64> = rows.iter().map(|r| r.0).collect();
                let positions: Vec<DVector<f64>> = rows.iter().map(|r| r.1.clone()).collect();
                let velocities = compute_velocities(&positions, &timestamps)?;
                for ((t, pos, attractor), vel) in rows.into_iter().zip(velocities) {
                    samples.push(Sample {
                        position: pos,
                        velocity: vel,
                        trajectory_id: id,
                        timestamp: t,
                        attractor,
                    });
                }
            }
        }
        sources.push(display);
    }

    let dim = dim.expect("at least one file was parsed");
    if format == CsvFormat::LasaExport {
        // Final sample of each trajectory is the target: finite differences
        // there are pure noise, so pin the velocity to zero and flag it.
        let mut final_idx: BTreeMap<u64, usize> = BTreeMap::new();
        for (idx, s) in samples.iter().enumerate() {
            let entry = final_idx.entry(s.trajectory_id).or_insert(idx);
            if samples[*entry].timestamp < s.timestamp {
                *entry = idx;
            }
        }
        for idx in final_idx.values() {
            samples[*idx].velocity = DVector::zeros(dim);
            samples[*idx].attractor = true;
        }
    }
    TrajectoryDataset::new(dim, samples, sources.join(";"))
}

/// Central differences in the interior, one-sided at the endpoints. Exact
/// for trajectories affine in time, with any (strictly increasing) spacing.
pub fn compute_velocities(
    positions: &[DVector<f64>],
    timestamps: &[f64],
) -> Result<Vec<DVector<f64>>> {
    if positions.len() != timestamps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} positions but {} timestamps",
            positions.len(),
            timestamps.len()
        )));
    }
    let m = positions.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let n = positions[0].len();
    if m == 1 {
        return Ok(vec![DVector::zeros(n)]);
    }
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let (lo, hi) = if k == 0 {
            (0, 1)
        } else if k == m - 1 {
            (m - 2, m - 1)
        } else {
            (k - 1, k + 1)
        };
        let dt = timestamps[hi] - timestamps[lo];
        if dt <= 0.0 {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at index {k}"
            )));
        }
        out.push((&positions[hi] - &positions[lo]) / dt);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic systems
// ---------------------------------------------------------------------------

/// Attractor positions of the two-attractor benchmark.
pub const TWO_ATTRACTOR_POSITIONS: [[f64; 2]; 2] = [[-1.0, 0.0], [1.0, 0.0]];

/// A continuous-time benchmark system with its integration defaults.
#[derive(Debug, Clone)]
pub struct SyntheticSystem {
    pub kind: SystemKind,
    /// RK4 integration step.
    pub step: f64,
    /// Default simulation duration.
    pub duration: f64,
}

#[derive(Debug, Clone)]
pub enum SystemKind {
    /// `f(x) = J_Ψ(x)^{-1} (-Ψ(x))` for a constrained warp `Ψ`, so that
    /// `V(x) = ||Ψ(x)||²` is a Lyapunov function by construction.
    WarpedLinear { warp: DiffeoNet },
    /// Negative gradient flow of a two-well potential plus a small
    /// solenoidal twist; stable equilibria at (±1, 0), saddle at the origin.
    TwoAttractor { rotation: f64 },
    /// `ẍ = mu (1 - x²) ẋ - x` as a first-order system.
    VanDerPol { mu: f64 },
}

impl SyntheticSystem {
    pub fn warped_linear(warp: DiffeoNet) -> Self {
        Self {
            kind: SystemKind::WarpedLinear { warp },
            step: 0.01,
            duration: 8.0,
        }
    }

    pub fn two_attractor(rotation: f64) -> Self {
        Self {
            kind: SystemKind::TwoAttractor { rotation },
            step: 0.01,
            duration: 40.0,
        }
    }

    pub fn van_der_pol(mu: f64) -> Self {
        Self {
            kind: SystemKind::VanDerPol { mu },
            step: 0.01,
            duration: 20.0,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SystemKind::WarpedLinear { warp } => warp.dim(),
            _ => 2,
        }
    }

    /// Vector field `f(x)`.
    pub fn field(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.kind {
            SystemKind::WarpedLinear { warp } => {
                let psi = warp.forward(x)?;
                let j = warp.jacobian(x)?;
                j.lu().solve(&(-psi)).ok_or_else(|| {
                    Error::Numeric("warp Jacobian became singular".into())
                })
            }
            SystemKind::TwoAttractor { rotation } => {
                if x.len() != 2 {
                    return Err(Error::InvalidArgument("two-attractor system is 2-D".into()));
                }
                let gx = x[0].powi(3) - x[0];
                let gy = x[1];
                Ok(DVector::from_vec(vec![
                    -gx - rotation * gy,
                    -gy + rotation * gx,
                ]))
            }
            SystemKind::VanDerPol { mu } => {
                if x.len() != 2 {
                    return Err(Error::InvalidArgument("Van der Pol system is 2-D".into()));
                }
                Ok(DVector::from_vec(vec![
                    x[1],
                    mu * (1.0 - x[0] * x[0]) * x[1] - x[0],
                ]))
            }
        }
    }

    /// Six canonical initial positions for the two-attractor experiment.
    pub fn two_attractor_initial_states() -> Vec<DVector<f64>> {
        [
            [-2.0, 1.5],
            [2.0, 1.5],
            [-2.0, -1.5],
            [2.0, -1.5],
            [0.3, 1.8],
            [-0.3, -1.8],
        ]
        .iter()
        .map(|p| DVector::from_row_slice(p))
        .collect()
    }
}

fn rk4_step(
    system: &SyntheticSystem,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let k1 = system.field(x)?;
    let k2 = system.field(&(x + &k1 * (h / 2.0)))?;
    let k3 = system.field(&(x + &k2 * (h / 2.0)))?;
    let k4 = system.field(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// RK4 simulation storing every step; see [`simulate_strided`].
pub fn simulate(
    system: &SyntheticSystem,
    initial_states: &[DVector<f64>],
    duration: f64,
) -> Result<TrajectoryDataset> {
    simulate_strided(system, initial_states, duration, 1)
}

/// RK4 simulation storing every `stride`-th state (always including the
/// initial one). Velocities come from the analytic vector field at the
/// stored states; divergence beyond `||x|| > 1e6` is an error naming the
/// initial state.
pub fn simulate_strided(
    system: &SyntheticSystem,
    initial_states: &[DVector<f64>],
    duration: f64,
    stride: usize,
) -> Result<TrajectoryDataset> {
    if initial_states.is_empty() {
        return Err(Error::InvalidArgument("no initial states given".into()));
    }
    if !(duration > 0.0) || !(system.step > 0.0) {
        return Err(Error::InvalidArgument(
            "duration and step must be positive".into(),
        ));
    }
    let stride = stride.max(1);
    let n = system.dim();
    let steps = (duration / system.step).round() as usize;
    let mut samples = Vec::new();
    for (traj, init) in initial_states.iter().enumerate() {
        if init.len() != n {
            return Err(Error::InvalidArgument(format!(
                "initial state {traj} has dimension {}, expected {n}",
                init.len()
            )));
        }
        let mut x = init.clone();
        for k in 0..=steps {
            if x.iter().any(|v| !v.is_finite()) || x.norm() > 1e6 {
                return Err(Error::Numeric(format!(
                    "trajectory from {:?} diverged near t = {}",
                    init.as_slice(),
                    k as f64 * system.step
                )));
            }
            if k % stride == 0 {
                samples.push(Sample {
                    position: x.clone(),
                    velocity: system.field(&x)?,
                    trajectory_id: traj as u64,
                    timestamp: k as f64 * system.step,
                    attractor: false,
                });
            }
            if k < steps {
                x = rk4_step(system, &x, system.step)?;
            }
        }
    }
    TrajectoryDataset::new(n, samples, format!("simulate:{:?}", kind_name(&system.kind)))
}

fn kind_name(kind: &SystemKind) -> &'static str {
    match kind {
        SystemKind::WarpedLinear { .. } => "warped_linear",
        SystemKind::TwoAttractor { .. } => "two_attractor",
        SystemKind::VanDerPol { .. } => "van_der_pol",
    }
}

/// Approximately equally spaced samples along the Van der Pol limit cycle.
///
/// Integrates past the transient, brackets one period with a Poincaré
/// section, then resamples the closed orbit at equal arc length. Returns the
/// flagged samples (velocity = field value, tangent to the cycle) and the
/// measured period.
pub fn sample_limit_cycle(
    system: &SyntheticSystem,
    count: usize,
    trajectory_id: u64,
) -> Result<(Vec<Sample>, f64)> {
    if !matches!(system.kind, SystemKind::VanDerPol { .. }) {
        return Err(Error::InvalidArgument(
            "limit-cycle sampling is defined for the Van der Pol system".into(),
        ));
    }
    if count < 2 {
        return Err(Error::InvalidArgument("need at least two cycle samples".into()));
    }
    let h = system.step;

    // Transient decay onto the cycle.
    let mut x = DVector::from_vec(vec![2.0, 0.0]);
    let transient_steps = (30.0 / h).round() as usize;
    for _ in 0..transient_steps {
        x = rk4_step(system, &x, h)?;
    }

    // Downward crossings of the section {x2 = 0, x1 > 0} bracket one period.
    let mut crossings: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut states: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut t = 0.0;
    let mut prev = x.clone();
    let max_steps = (40.0 / h).round() as usize;
    for _ in 0..max_steps {
        let next = rk4_step(system, &prev, h)?;
        let t_next = t + h;
        if prev[1] > 0.0 && next[1] <= 0.0 && next[0] > 0.0 {
            let frac = prev[1] / (prev[1] - next[1]);
            let state = &prev + (&next - &prev) * frac;
            crossings.push((t + frac * h, state));
            if crossings.len() == 2 {
                states.push((t_next, next.clone()));
                break;
            }
        }
        if crossings.len() == 1 {
            states.push((t_next, next.clone()));
        }
        prev = next;
        t = t_next;
    }
    if crossings.len() < 2 {
        return Err(Error::Numeric(
            "failed to bracket one limit-cycle period".into(),
        ));
    }
    let (t0, start) = crossings[0].clone();
    let (t1, _) = crossings[1].clone();
    let period = t1 - t0;

    // Dense polyline over one period: the interpolated section point plus
    // every integration state until the second crossing.
    let mut poly: Vec<(f64, DVector<f64>)> = vec![(t0, start)];
    poly.extend(states);

    let mut arc = vec![0.0f64];
    for w in poly.windows(2) {
        let d = (&w[1].1 - &w[0].1).norm();
        arc.push(arc.last().expect("non-empty") + d);
    }
    let total = *arc.last().expect("non-empty");

    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let target = total * k as f64 / count as f64;
        let idx = match arc.binary_search_by(|a| a.partial_cmp(&target).expect("finite")) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1).min(poly.len() - 2),
        };
        let seg = (arc[idx + 1] - arc[idx]).max(f64::MIN_POSITIVE);
        let frac = ((target - arc[idx]) / seg).clamp(0.0, 1.0);
        let pos = &poly[idx].1 + (&poly[idx + 1].1 - &poly[idx].1) * frac;
        let time = poly[idx].0 + (poly[idx + 1].0 - poly[idx].0) * frac;
        samples.push(Sample {
            velocity: system.field(&pos)?,
            position: pos,
            trajectory_id: trajectory_id,
            timestamp: time - t0,
            attractor: true,
        });
    }
    Ok((samples, period))
}

// ---------------------------------------------------------------------------
// Warped-linear benchmark
// ---------------------------------------------------------------------------

/// A stable system for which a diffeomorphic Lyapunov function exists by
/// construction, together with that ground truth.
#[derive(Debug, Clone)]
pub struct WarpedLinearBenchmark {
    pub system: SyntheticSystem,
    /// The warp `Ψ`; `V(x) = ||Ψ(x)||²` certifies the system.
    pub warp: DiffeoNet,
    /// The system's equilibrium `Ψ^{-1}(0)` (not the origin in general).
    pub equilibrium: DVector<f64>,
}

impl WarpedLinearBenchmark {
    /// Benchmark from a given warp.
    pub fn from_warp(warp: DiffeoNet) -> Result<Self> {
        let zero = DVector::zeros(warp.dim());
        let equilibrium = warp.inverse(&zero, 1e-12, 500)?;
        Ok(Self {
            system: SyntheticSystem::warped_linear(warp.clone()),
            warp,
            equilibrium,
        })
    }

    /// Seeded random benchmark: a 3-layer constrained warp over the unit box.
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut warp = DiffeoNet::identity(2);
        for _ in 0..3 {
            let sigma = 0.5 + 0.4 * rng.gen::<f64>();
            let spec = KernelSpec::isotropic(2, sigma)?;
            let centers: Vec<DVector<f64>> = (0..8)
                .map(|_| DVector::from_fn(2, |_, _| 3.0 * (rng.gen::<f64>() - 0.5)))
                .collect();
            let rho = spec.weight_bounds(centers.len())?;
            let weights = DMatrix::from_fn(2, centers.len(), |j, _| {
                0.9 * DEFAULT_MARGIN * rho[j] * (2.0 * rng.gen::<f64>() - 1.0)
            });
            warp.push_layer(RbfLayer::new(spec, centers, weights, DEFAULT_MARGIN)?)?;
        }
        Self::from_warp(warp)
    }

    /// Ground-truth Lyapunov value `||Ψ(x)||²`.
    pub fn ground_truth_value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.warp.forward(x)?.norm_squared())
    }

    /// Ground-truth gradient `2 J_Ψ(x)^T Ψ(x)`.
    pub fn ground_truth_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let trace = self.warp.forward_trace(x)?;
        let psi = trace.last().expect("trace non-empty").clone();
        self.warp.pull_back(&trace, &(psi * 2.0))
    }

    /// Initial states on a circle around the equilibrium.
    pub fn ring_initial_states(&self, count: usize, radius: f64) -> Vec<DVector<f64>> {
        (0..count)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVector::from_vec(vec![
                    self.equilibrium[0] + radius * angle.cos(),
                    self.equilibrium[1] + radius * angle.sin(),
                ])
            })
            .collect()
    }
}

/// Seeded random warped-linear benchmark (see [`WarpedLinearBenchmark::new`]).
pub fn make_warped_linear(seed: u64) -> Result<WarpedLinearBenchmark> {
    WarpedLinearBenchmark::new(seed)
}

// ---------------------------------------------------------------------------
// Handwriting-style shape generator
// ---------------------------------------------------------------------------

/// Deterministic generator of handwriting-like 2-D demonstration sets in the
/// layout of the LASA benchmark (several demonstrations of one shape, all
/// ending at a common target with vanishing velocity).
///
/// These stand in for the original recordings when they are not available;
/// the CSV loader accepts real conversions with the identical schema.
pub mod shapes {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Shape {
        Angle,
        CShape,
        ZShape,
        Sine,
    }

    impl Shape {
        pub const ALL: [Shape; 4] = [Shape::Angle, Shape::CShape, Shape::ZShape, Shape::Sine];

        pub fn name(&self) -> &'static str {
            match self {
                Shape::Angle => "angle",
                Shape::CShape => "c_shape",
                Shape::ZShape => "z_shape",
                Shape::Sine => "sine",
            }
        }

        pub fn parse(name: &str) -> Option<Shape> {
            match name.to_ascii_lowercase().as_str() {
                "angle" => Some(Shape::Angle),
                "c_shape" | "cshape" | "c-shape" => Some(Shape::CShape),
                "z_shape" | "zshape" | "z-shape" => Some(Shape::ZShape),
                "sine" => Some(Shape::Sine),
                _ => None,
            }
        }

        fn control_points(&self) -> Vec<[f64; 2]> {
            match self {
                Shape::Angle => vec![[-25.0, 30.0], [-10.0, -6.0], [8.0, 2.0], [0.0, 0.0]],
                Shape::CShape => vec![
                    [-11.1, 23.2],
                    [0.3, 28.3],
                    [11.4, 23.6],
                    [15.3, 12.7],
                    [10.2, 2.8],
                    [0.0, 0.0],
                ],
                Shape::ZShape => vec![[-25.0, 32.0], [12.0, 28.0], [-15.0, -4.0], [0.0, 0.0]],
                Shape::Sine => vec![
                    [42.0, -2.0],
                    [34.0, 9.0],
                    [25.0, -9.0],
                    [15.0, 8.0],
                    [7.0, -6.0],
                    [0.0, 0.0],
                ],
            }
        }
    }

    /// Catmull-Rom spline through control points; the endpoint is hit
    /// exactly. Returns position and d(position)/ds.
    fn spline_eval(points: &[DVector<f64>], s: f64) -> (DVector<f64>, DVector<f64>) {
        let m = points.len() - 1;
        let scaled = s.clamp(0.0, 1.0) * m as f64;
        let seg = (scaled.floor() as usize).min(m - 1);
        let u = scaled - seg as f64;
        let at = |i: isize| -> &DVector<f64> {
            let idx = i.clamp(0, (points.len() - 1) as isize) as usize;
            &points[idx]
        };
        let p0 = at(seg as isize - 1);
        let p1 = at(seg as isize);
        let p2 = at(seg as isize + 1);
        let p3 = at(seg as isize + 2);
        let a = p1 * 2.0;
        let b = p2 - p0;
        let c = p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3;
        let d = -p0 + p1 * 3.0 - p2 * 3.0 + p3;
        let pos = (&a + &b * u + &c * (u * u) + &d * (u * u * u)) * 0.5;
        let dpos_du = (&b + &c * (2.0 * u) + &d * (3.0 * u * u)) * 0.5;
        (pos, dpos_du * m as f64)
    }

    /// Generates `demos` demonstrations of `points` samples each. Every
    /// demonstration ends exactly at the origin with zero velocity; the
    /// per-demonstration variation jitters the interior control points.
    pub fn generate(
        shape: Shape,
        demos: usize,
        points: usize,
        seed: u64,
    ) -> Result<TrajectoryDataset> {
        if demos == 0 || points < 2 {
            return Err(Error::InvalidArgument(
                "need at least one demonstration and two points".into(),
            ));
        }
        let total_time = 3.0;
        let mut samples = Vec::with_capacity(demos * points);
        for demo in 0..demos {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (demo as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let mut controls: Vec<DVector<f64>> = shape
                .control_points()
                .iter()
                .map(|p| DVector::from_row_slice(p))
                .collect();
            let last = controls.len() - 1;
            for (idx, c) in controls.iter_mut().enumerate() {
                if idx == last {
                    continue; // common target
                }
                for j in 0..2 {
                    c[j] += 3.6 * (rng.gen::<f64>() - 0.5);
                }
            }
            for k in 0..points {
                let tau = total_time * k as f64 / (points - 1) as f64;
                // Ease-out time warp: velocity vanishes at the target.
                let w = 1.0 - tau / total_time;
                let s = 1.0 - w * w;
                let ds_dtau = 2.0 * w / total_time;
                let (pos, dpos_ds) = spline_eval(&controls, s);
                let terminal = k == points - 1;
                samples.push(Sample {
                    // The ease-out warp makes the analytic endpoint exactly
                    // the common target with zero velocity; pin it bit-exactly.
                    position: if terminal { controls[last].clone() } else { pos },
                    velocity: dpos_ds * ds_dtau,
                    trajectory_id: demo as u64,
                    timestamp: tau,
                    attractor: terminal,
                });
            }
        }
        TrajectoryDataset::new(2, samples, format!("shapes:{}", shape.name()))
    }
}
