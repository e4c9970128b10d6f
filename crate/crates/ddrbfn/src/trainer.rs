//! Receding-horizon layer growth.
//!
//! Training treats the layer index as discrete time: the state is the image
//! `z_t` of a data point under the current composition, a candidate layer's
//! weight matrix is the control input, and the weight boxes are the input
//! constraints. Each outer iteration instantiates `H` candidate layers on
//! top of the current net, minimizes the empirical Lyapunov risk summed over
//! the horizon with projected gradient descent, appends only the first
//! optimized layer, and discards the rest.
//!
//! The inner objective needs exact derivatives of `∇(V_b ∘ Φ)(x)^T ẋ` with
//! respect to every candidate weight matrix. Per sample, forward state
//! `(u_h, v_h)` carries the point image and the pushforward of the velocity
//! through the candidate prefix; the backward sweep propagates a pair of
//! adjoints through `u_h = u_{h-1} + W_h K_h(u_{h-1})` and
//! `v_h = (I + W_h G_h(u_{h-1})) v_{h-1}`, which requires the base
//! function's Hessian and kernel Hessian-vector products but stays
//! O(neurons · n) per layer and sample.
//!
//! Center and bandwidth selection is deliberately simple and deterministic:
//! seeded subsampling or seeded k-means on the current images, isotropic
//! bandwidths from the median nearest-neighbor distance among the chosen
//! centers.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use crate::base::BaseFunction;
use crate::data::TrajectoryDataset;
use crate::diffeo::{DiffeoNet, RbfLayer, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::lyapunov::{LyapunovCandidate, RiskMode, DEFAULT_EXCLUSION_RADIUS, DEFAULT_HINGE_MARGIN};

/// Bandwidth selection for new layers.
#[derive(Debug, Clone)]
pub enum SigmaPolicy {
    /// One covariance shared by every layer.
    Fixed(DMatrix<f64>),
    /// Isotropic `sigma = kappa * median nearest-neighbor distance` among
    /// the chosen centers.
    NearestNeighbor { kappa: f64 },
}

/// Center selection for new layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterPolicy {
    /// Seeded subsample of the (deduplicated) points.
    Subsample,
    /// Seeded k-means with a fixed 25 refinement steps.
    KMeans,
}

/// Projected-gradient settings for the horizon solve.
#[derive(Debug, Clone)]
pub struct InnerSolverConfig {
    /// Initial step, as a fraction of the smallest box half-width per unit
    /// of gradient infinity-norm.
    pub step_scale: f64,
    pub max_steps: usize,
    /// Relative improvement below which the solve counts as converged.
    pub tol: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            step_scale: 0.5,
            max_steps: 200,
            tol: 1e-9,
        }
    }
}

/// Configuration of the receding-horizon trainer.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Prediction horizon (candidate layers per outer iteration).
    pub horizon: usize,
    /// Maximum layers to append.
    pub iterations: usize,
    pub neurons_per_layer: usize,
    pub sigma_policy: SigmaPolicy,
    pub center_policy: CenterPolicy,
    pub solver: InnerSolverConfig,
    pub risk_mode: RiskMode,
    pub hinge_margin: f64,
    /// Box strictness margin γ of appended layers.
    pub margin: f64,
    pub seed: u64,
    /// Early stop when the risk improves by less than this (relative) for
    /// three consecutive iterations, or when training violations hit zero.
    pub stop_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            iterations: 60,
            neurons_per_layer: 25,
            sigma_policy: SigmaPolicy::NearestNeighbor { kappa: 1.0 },
            center_policy: CenterPolicy::KMeans,
            solver: InnerSolverConfig::default(),
            risk_mode: RiskMode::Hinge,
            hinge_margin: DEFAULT_HINGE_MARGIN,
            margin: DEFAULT_MARGIN,
            seed: 0,
            stop_tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iterations == 0 || self.neurons_per_layer == 0 {
            return Err(Error::InvalidArgument(
                "horizon, iterations, and neurons per layer must be positive".into(),
            ));
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must lie in (0, 1), got {}",
                self.margin
            )));
        }
        if !(self.solver.step_scale > 0.0 && self.solver.tol > 0.0 && self.stop_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "solver step scale and tolerances must be positive".into(),
            ));
        }
        if let SigmaPolicy::NearestNeighbor { kappa } = self.sigma_policy {
            if !(kappa > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "kappa must be positive, got {kappa}"
                )));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub risk: f64,
    pub violation_rate: f64,
    pub wall_time_s: f64,
    pub appended: bool,
}

/// Per-iteration risk, violation rate, and wall time.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
}

impl TrainLog {
    /// Line-oriented text form (`iteration,risk,violation_rate,wall_time_s`).
    pub fn to_text(&self) -> String {
        let mut out = String::from("iteration,risk,violation_rate,wall_time_s\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{:.3}\n",
                r.iteration, r.risk, r.violation_rate, r.wall_time_s
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Center and bandwidth selection
// ---------------------------------------------------------------------------

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y).expect("finite coordinates") {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let m = values.len();
    Some(if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    })
}

/// Selects `count` centers from `points` and a covariance for the layer.
///
/// Deterministic given the seed: subsampling shuffles with a seeded RNG and
/// the result is order-normalized (sorted lexicographically); k-means runs
/// exactly 25 refinement steps from a seeded initialization. The isotropic
/// bandwidth is `kappa ×` the median nearest-neighbor distance among the
/// chosen centers.
pub fn place_centers(
    points: &[DVector<f64>],
    count: usize,
    center_policy: CenterPolicy,
    sigma_policy: &SigmaPolicy,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, DMatrix<f64>)> {
    if points.is_empty() || count == 0 {
        return Err(Error::InvalidArgument(
            "center placement needs points and a positive count".into(),
        ));
    }
    let dim = points[0].len();
    let mut distinct: Vec<DVector<f64>> = points.to_vec();
    distinct.sort_by(lex_less);
    distinct.dedup();
    if count > distinct.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {count} centers but only {} distinct points",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<DVector<f64>> = match center_policy {
        CenterPolicy::Subsample => {
            let mut picked = distinct.clone();
            picked.shuffle(&mut rng);
            picked.truncate(count);
            picked
        }
        CenterPolicy::KMeans => {
            let mut init = distinct.clone();
            init.shuffle(&mut rng);
            init.truncate(count);
            let mut centroids = init;
            for _ in 0..25 {
                let mut sums: Vec<DVector<f64>> = vec![DVector::zeros(dim); count];
                let mut counts = vec![0usize; count];
                for p in &distinct {
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (i, c) in centroids.iter().enumerate() {
                        let d = (p - c).norm_squared();
                        if d < best_d {
                            best_d = d;
                            best = i;
                        }
                    }
                    sums[best] += p;
                    counts[best] += 1;
                }
                for i in 0..count {
                    if counts[i] > 0 {
                        centroids[i] = &sums[i] / counts[i] as f64;
                    }
                }
            }
            centroids
        }
    };
    centers.sort_by(lex_less);

    let sigma = match sigma_policy {
        SigmaPolicy::Fixed(m) => {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::InvalidArgument(format!(
                    "fixed covariance is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            m.clone()
        }
        SigmaPolicy::NearestNeighbor { kappa } => {
            let mut nn: Vec<f64> = Vec::with_capacity(centers.len());
            for (i, c) in centers.iter().enumerate() {
                let mut best = f64::INFINITY;
                for (j, other) in centers.iter().enumerate() {
                    if i != j {
                        best = best.min((c - other).norm());
                    }
                }
                if best.is_finite() {
                    nn.push(best);
                }
            }
            let mut fallback: Vec<f64> = points
                .iter()
                .map(|p| (p - &centers[0]).norm())
                .filter(|d| *d > 0.0)
                .collect();
            let scale = median(&mut nn)
                .filter(|s| *s > 0.0)
                .or_else(|| median(&mut fallback).filter(|s| *s > 0.0))
                .unwrap_or(1.0);
            let s = kappa * scale;
            DMatrix::identity(dim, dim) * (s * s)
        }
    };
    Ok((centers, sigma))
}

// ---------------------------------------------------------------------------
// Horizon subproblem
// ---------------------------------------------------------------------------

/// A candidate layer before its weights are chosen.
#[derive(Debug, Clone)]
pub struct CandidateLayer {
    pub spec: KernelSpec,
    pub centers: Vec<DVector<f64>>,
    /// Per-coordinate weight bounds for this candidate.
    pub rho: DVector<f64>,
}

impl CandidateLayer {
    pub fn new(spec: KernelSpec, centers: Vec<DVector<f64>>) -> Result<Self> {
        let rho = spec.weight_bounds(centers.len())?;
        Ok(Self { spec, centers, rho })
    }
}

/// One data point as the horizon solve sees it: its image under the current
/// net, the pushforward of its velocity, and its risk bookkeeping.
#[derive(Debug, Clone)]
pub struct HorizonSample {
    pub image: DVector<f64>,
    pub pushed_velocity: DVector<f64>,
    /// `||ẋ||` in data coordinates, for the hinge normalization.
    pub speed: f64,
    pub flagged: bool,
}

/// The boxed optimization problem of one outer iteration.
pub struct HorizonProblem<'a> {
    pub base: &'a BaseFunction,
    pub candidates: Vec<CandidateLayer>,
    pub samples: Vec<HorizonSample>,
    pub risk_mode: RiskMode,
    pub hinge_margin: f64,
    pub margin: f64,
}

/// Risk term and its derivative with respect to the directional derivative.
fn risk_term(dd: f64, flagged: bool, mode: RiskMode, margin: f64, speed: f64) -> (f64, f64) {
    if flagged {
        (dd.abs(), if dd > 0.0 { 1.0 } else if dd < 0.0 { -1.0 } else { 0.0 })
    } else {
        match mode {
            RiskMode::Raw => (dd, 1.0),
            RiskMode::Hinge => {
                let slack = dd + margin * speed;
                if slack > 0.0 {
                    (slack, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

impl HorizonProblem<'_> {
    fn check_weights(&self, weights: &[DMatrix<f64>]) -> Result<()> {
        if weights.len() != self.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weight matrices for {} candidates",
                weights.len(),
                self.candidates.len()
            )));
        }
        Ok(())
    }

    /// Objective: the configured risk summed over all horizon depths.
    pub fn objective(&self, weights: &[DMatrix<f64>]) -> Result<f64> {
        self.check_weights(weights)?;
        let mut total = 0.0;
        for s in &self.samples {
            let mut u = s.image.clone();
            let mut v = s.pushed_velocity.clone();
            for (cand, w) in self.candidates.iter().zip(weights) {
                let mut k = DVector::zeros(cand.centers.len());
                let mut gv = DVector::zeros(cand.centers.len());
                for (i, c) in cand.centers.iter().enumerate() {
                    let (ki, gi) = cand.spec.eval_grad(&u, c)?;
                    k[i] = ki;
                    gv[i] = gi.dot(&v);
                }
                u += w * k;
                v += w * gv;
                let dd = self.base.grad(&u)?.dot(&v);
                let (term, _) = risk_term(dd, s.flagged, self.risk_mode, self.hinge_margin, s.speed);
                total += term;
            }
        }
        if !total.is_finite() {
            return Err(Error::Numeric("horizon objective is not finite".into()));
        }
        Ok(total)
    }

    /// Objective value and its gradient with respect to every candidate
    /// weight matrix, by one reverse sweep per sample.
    pub fn objective_gradient(&self, weights: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)> {
        self.check_weights(weights)?;
        let horizon = self.candidates.len();
        let dim = self.base_dim();
        let mut grads: Vec<DMatrix<f64>> = self
            .candidates
            .iter()
            .map(|c| DMatrix::zeros(dim, c.centers.len()))
            .collect();
        let mut total = 0.0;

        // Per-sample forward storage.
        struct Step {
            u_prev: DVector<f64>,
            v_prev: DVector<f64>,
            kernel: DVector<f64>,
            grad_v: DVector<f64>,   // G v_prev
            grad_mat: Vec<DVector<f64>>, // rows of G (kernel gradients)
            dd_slope: f64,
            base_grad: DVector<f64>,    // b(u_h)
            hessian_v: DVector<f64>,    // H_b(u_h) v_h
        }

        for s in &self.samples {
            let mut u = s.image.clone();
            let mut v = s.pushed_velocity.clone();
            let mut steps: Vec<Step> = Vec::with_capacity(horizon);
            for (cand, w) in self.candidates.iter().zip(weights) {
                let count = cand.centers.len();
                let mut k = DVector::zeros(count);
                let mut gv = DVector::zeros(count);
                let mut rows = Vec::with_capacity(count);
                for (i, c) in cand.centers.iter().enumerate() {
                    let (ki, gi) = cand.spec.eval_grad(&u, c)?;
                    k[i] = ki;
                    gv[i] = gi.dot(&v);
                    rows.push(gi);
                }
                let u_next = &u + w * &k;
                let v_next = &v + w * &gv;
                let bg = self.base.grad(&u_next)?;
                let dd = bg.dot(&v_next);
                let (term, slope) =
                    risk_term(dd, s.flagged, self.risk_mode, self.hinge_margin, s.speed);
                total += term;
                let hv = self.base.hessian(&u_next)? * &v_next;
                steps.push(Step {
                    u_prev: u,
                    v_prev: v,
                    kernel: k,
                    grad_v: gv,
                    grad_mat: rows,
                    dd_slope: slope,
                    base_grad: bg,
                    hessian_v: hv,
                });
                u = u_next;
                v = v_next;
            }

            // Reverse sweep.
            let mut lambda = DVector::<f64>::zeros(dim);
            let mut mu = DVector::<f64>::zeros(dim);
            for h in (0..horizon).rev() {
                let step = &steps[h];
                let cand = &self.candidates[h];
                let w = &weights[h];
                lambda += &step.hessian_v * step.dd_slope;
                mu += &step.base_grad * step.dd_slope;

                // Gradient of the weight matrix at this depth.
                grads[h] += &lambda * step.kernel.transpose() + &mu * step.grad_v.transpose();

                if h > 0 {
                    // Propagate through u_h = u_{h-1} + W K and v_h = J v_{h-1}.
                    let wt_mu = w.transpose() * &mu;
                    let wt_lambda = w.transpose() * &lambda;
                    let mut lambda_prev = lambda.clone();
                    let mut mu_prev = mu.clone();
                    for (i, c) in cand.centers.iter().enumerate() {
                        // J^T contributions: G^T (W^T λ) and G^T (W^T μ).
                        lambda_prev += &step.grad_mat[i] * wt_lambda[i];
                        mu_prev += &step.grad_mat[i] * wt_mu[i];
                        // Curvature term M^T (W^T μ) with M_i = ∇²k_i v_{h-1}.
                        let hkv = cand.spec.hessian_times(&step.u_prev, c, &step.v_prev)?;
                        lambda_prev += hkv * wt_mu[i];
                    }
                    lambda = lambda_prev;
                    mu = mu_prev;
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::Numeric("horizon objective is not finite".into()));
        }
        Ok((total, grads))
    }

    fn base_dim(&self) -> usize {
        self.samples
            .first()
            .map(|s| s.image.len())
            .unwrap_or_else(|| self.candidates.first().map(|c| c.spec.dim()).unwrap_or(0))
    }

    fn project(&self, weights: &mut [DMatrix<f64>]) {
        for (cand, w) in self.candidates.iter().zip(weights.iter_mut()) {
            for j in 0..w.nrows() {
                let cap = self.margin * cand.rho[j];
                for i in 0..w.ncols() {
                    w[(j, i)] = w[(j, i)].clamp(-cap, cap);
                }
            }
        }
    }
}

/// Minimizes the horizon objective over the weight boxes by projected
/// gradient descent from the zero (identity) initialization.
///
/// The returned weights are always feasible and the objective value is never
/// worse than at zero.
pub fn solve_horizon(
    problem: &HorizonProblem<'_>,
    solver: &InnerSolverConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let dim = problem.base_dim();
    let mut weights: Vec<DMatrix<f64>> = problem
        .candidates
        .iter()
        .map(|c| DMatrix::zeros(dim, c.centers.len()))
        .collect();
    if problem.samples.is_empty() {
        return Ok(weights);
    }

    let (mut f_cur, mut grads) = problem.objective_gradient(&weights)?;
    let gmax = grads
        .iter()
        .map(|g| g.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0f64, f64::max);
    if gmax == 0.0 {
        return Ok(weights);
    }
    let cap = problem
        .candidates
        .iter()
        .flat_map(|c| c.rho.iter().map(|r| problem.margin * r))
        .fold(f64::INFINITY, f64::min);
    let mut alpha = solver.step_scale * cap / gmax;
    let mut stale = 0usize;

    for _ in 0..solver.max_steps {
        let mut trial = weights.clone();
        for (t, g) in trial.iter_mut().zip(&grads) {
            *t -= g * alpha;
        }
        problem.project(&mut trial);
        let f_trial = problem.objective(&trial)?;
        if f_trial < f_cur {
            let improvement = (f_cur - f_trial) / (1.0 + f_cur.abs());
            weights = trial;
            f_cur = f_trial;
            let (_, g_new) = problem.objective_gradient(&weights)?;
            grads = g_new;
            if improvement < solver.tol {
                stale += 1;
                if stale >= 2 {
                    break;
                }
            } else {
                stale = 0;
            }
        } else {
            alpha *= 0.5;
            if alpha * gmax < 1e-16 * cap {
                break;
            }
        }
    }
    Ok(weights)
}

// ---------------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------------

fn seed_for(seed: u64, iteration: usize, depth: usize) -> u64 {
    seed ^ ((iteration as u64 * 131 + depth as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn build_candidates(
    config: &TrainConfig,
    images: &[DVector<f64>],
    iteration: usize,
) -> Result<Vec<CandidateLayer>> {
    let mut candidates = Vec::with_capacity(config.horizon);
    for h in 0..config.horizon {
        let (centers, sigma) = place_centers(
            images,
            config.neurons_per_layer,
            config.center_policy,
            &config.sigma_policy,
            seed_for(config.seed, iteration, h),
        )?;
        let spec = KernelSpec::new(sigma)?;
        candidates.push(CandidateLayer::new(spec, centers)?);
        // Candidate layers start at zero weights, so deeper predicted states
        // coincide with the current images; centers are refreshed once per
        // outer iteration.
    }
    Ok(candidates)
}

/// Trains a diffeomorphism so that `V_b ∘ Φ` satisfies the descent condition
/// on the dataset. Returns the net and the per-iteration log.
pub fn train(
    config: &TrainConfig,
    base: &BaseFunction,
    data: &TrajectoryDataset,
) -> Result<(DiffeoNet, TrainLog)> {
    train_with_hook(config, base, data, &mut |_| {})
}

/// Training loop with a test seam: `discard_hook` may mutate the weight
/// matrices beyond the first one after each horizon solve, which must not
/// change the result (only the first matrix is ever used).
pub(crate) fn train_with_hook(
    config: &TrainConfig,
    base: &BaseFunction,
    data: &TrajectoryDataset,
    discard_hook: &mut dyn FnMut(&mut [DMatrix<f64>]),
) -> Result<(DiffeoNet, TrainLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    if let Some(n) = base.dim() {
        if n != data.dim() {
            return Err(Error::InvalidArgument(format!(
                "base function dimension {n} does not match data dimension {}",
                data.dim()
            )));
        }
    }

    let mut net = DiffeoNet::identity(data.dim());
    let mut log = TrainLog::default();
    let mut prev_risk = {
        let cand = LyapunovCandidate::new(base.clone(), net.clone())?;
        cand.risk(data, config.risk_mode, config.hinge_margin)?
    };
    let mut stale = 0usize;

    for iteration in 0..config.iterations {
        let started = Instant::now();

        // Images and pushed velocities under the current composition.
        let mut images = Vec::with_capacity(data.len());
        let mut samples = Vec::with_capacity(data.len());
        for s in data.samples() {
            let (image, pushed) = net.push_forward(&s.position, &s.velocity)?;
            images.push(image.clone());
            samples.push(HorizonSample {
                image,
                pushed_velocity: pushed,
                speed: s.velocity.norm(),
                flagged: s.attractor,
            });
        }

        let candidates = build_candidates(config, &images, iteration)?;
        let problem = HorizonProblem {
            base,
            candidates,
            samples,
            risk_mode: config.risk_mode,
            hinge_margin: config.hinge_margin,
            margin: config.margin,
        };
        let mut weights = solve_horizon(&problem, &config.solver)?;
        discard_hook(&mut weights[1..]);
        let first = weights.into_iter().next().expect("horizon >= 1");
        let template = problem.candidates.into_iter().next().expect("horizon >= 1");

        let mut appended = false;
        if first.iter().any(|w| *w != 0.0) {
            let layer = RbfLayer::new(template.spec, template.centers, first, config.margin)?;
            let mut trial = net.clone();
            trial.push_layer(layer)?;
            let trial_risk = {
                let cand = LyapunovCandidate::new(base.clone(), trial.clone())?;
                cand.risk(data, config.risk_mode, config.hinge_margin)?
            };
            // Appending must not be worse than appending a zero layer (which
            // leaves the risk unchanged).
            if trial_risk <= prev_risk + 1e-12 * (1.0 + prev_risk.abs()) {
                net = trial;
                appended = true;
            }
        }

        let cand = LyapunovCandidate::new(base.clone(), net.clone())?;
        let risk = cand.risk(data, config.risk_mode, config.hinge_margin)?;
        let report = cand.violation_rate(data, DEFAULT_EXCLUSION_RADIUS)?;
        log.records.push(IterationRecord {
            iteration,
            risk,
            violation_rate: report.violation_rate,
            wall_time_s: started.elapsed().as_secs_f64(),
            appended,
        });

        if report.violation_rate == 0.0 && report.total_points > 0 {
            break;
        }
        let improvement = (prev_risk - risk) / (1.0 + prev_risk.abs());
        if !appended || improvement < config.stop_tolerance {
            stale += 1;
            if stale >= 3 {
                break;
            }
        } else {
            stale = 0;
        }
        prev_risk = risk;
    }

    Ok((net, log))
}

// ---------------------------------------------------------------------------
// Diffeomorphism regression
// ---------------------------------------------------------------------------

/// Greedy layer-by-layer least-squares fit of a known map from sampled
/// pairs `(x, y)`: each new layer minimizes `Σ ||u + W K(u) - y||²` over its
/// weight box, where `u` are the current images. Returns the net and the
/// mean error after each layer.
///
/// The convex per-layer problem is solved by projected gradient with the
/// exact Lipschitz step `1/(2 ||K K^T||)`, so the error never increases
/// with depth.
pub fn fit_diffeo_regression(
    pairs: &[(DVector<f64>, DVector<f64>)],
    depth: usize,
    config: &TrainConfig,
) -> Result<(DiffeoNet, Vec<f64>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("regression needs sample pairs".into()));
    }
    let dim = pairs[0].0.len();
    for (idx, (x, y)) in pairs.iter().enumerate() {
        if x.len() != dim || y.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "pair {idx} has inconsistent dimensions"
            )));
        }
    }

    let mut net = DiffeoNet::identity(dim);
    let mut errors = Vec::with_capacity(depth);
    let count = pairs.len();

    for t in 0..depth {
        let images: Vec<DVector<f64>> = pairs
            .iter()
            .map(|(x, _)| net.forward(x))
            .collect::<Result<_>>()?;
        let mean_err = |imgs: &[DVector<f64>]| -> f64 {
            imgs.iter()
                .zip(pairs)
                .map(|(u, (_, y))| (u - y).norm())
                .sum::<f64>()
                / count as f64
        };
        if mean_err(&images) < 1e-14 {
            errors.push(mean_err(&images));
            break;
        }

        let (centers, sigma) = place_centers(
            &images,
            config.neurons_per_layer.min(images.len()),
            config.center_policy,
            &config.sigma_policy,
            seed_for(config.seed, t, 0),
        )?;
        let spec = KernelSpec::new(sigma)?;
        let neurons = centers.len();
        let rho = spec.weight_bounds(neurons)?;

        // Residual matrix E (n x S) and kernel matrix K (N x S).
        let mut e = DMatrix::zeros(dim, count);
        let mut kmat = DMatrix::zeros(neurons, count);
        for (s, (u, (_, y))) in images.iter().zip(pairs).enumerate() {
            let diff = u - y;
            for j in 0..dim {
                e[(j, s)] = diff[j];
            }
            for (i, c) in centers.iter().enumerate() {
                kmat[(i, s)] = spec.eval(u, c)?;
            }
        }
        let kkt = &kmat * kmat.transpose();
        let lipschitz = 2.0 * kkt.norm().max(f64::MIN_POSITIVE);
        let step = 1.0 / lipschitz;

        let mut w = DMatrix::<f64>::zeros(dim, neurons);
        let mut f_prev = f64::INFINITY;
        for _ in 0..config.solver.max_steps {
            let residual = &e + &w * &kmat;
            let f = residual.norm_squared();
            if f_prev - f < config.solver.tol * (1.0 + f.abs()) && f_prev.is_finite() {
                break;
            }
            f_prev = f;
            let grad = residual * kmat.transpose() * 2.0;
            w -= grad * step;
            for j in 0..dim {
                let cap = config.margin * rho[j];
                for i in 0..neurons {
                    w[(j, i)] = w[(j, i)].clamp(-cap, cap);
                }
            }
        }

        if w.iter().all(|v| *v == 0.0) {
            errors.push(mean_err(&images));
            continue;
        }
        net.push_layer(RbfLayer::new(spec, centers, w, config.margin)?)?;
        let new_images: Vec<DVector<f64>> = pairs
            .iter()
            .map(|(x, _)| net.forward(x))
            .collect::<Result<_>>()?;
        errors.push(mean_err(&new_images));
    }
    Ok((net, errors))
}
