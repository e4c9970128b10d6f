//! Composite Lyapunov candidates `V = V_b ∘ Φ`.
//!
//! Values compose directly; gradients come from the chain rule
//! `∇V(x) = J_Φ(x)^T ∇V_b(Φ(x))`, evaluated here with a trace-and-pullback
//! pass that costs O(depth · neurons · n) instead of assembling full
//! Jacobian products. Because every constrained net has an everywhere
//! positive Jacobian determinant, the candidate's gradient roots are exactly
//! the preimages of the base function's gradient roots: composing with the
//! net can never create or destroy stationary points.
//!
//! The empirical Lyapunov risk sums directional derivatives `∇V(x)^T ẋ`
//! over a dataset, either raw or hinged with a velocity-normalized margin;
//! samples flagged as attractor-set points contribute `|∇V^T ẋ|` instead,
//! since the candidate must be stationary on the attractor set rather than
//! decreasing. The violation rate counts non-descending samples outside an
//! exclusion neighborhood of the attractor set, where finite-difference
//! velocities are noise-dominated.

use nalgebra::DVector;

use crate::base::BaseFunction;
use crate::data::TrajectoryDataset;
use crate::diffeo::DiffeoNet;
use crate::error::{Error, Result};

/// Default hinge margin (velocity-normalized).
pub const DEFAULT_HINGE_MARGIN: f64 = 0.01;
/// Default exclusion radius around the attractor set for violation metrics,
/// in normalized state units.
pub const DEFAULT_EXCLUSION_RADIUS: f64 = 1e-3;

/// How per-sample directional derivatives enter the risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMode {
    /// Plain sum of directional derivatives.
    Raw,
    /// `max(0, ∇V^T ẋ + margin ||ẋ||)` per sample.
    Hinge,
}

/// A base function composed with a diffeomorphism.
#[derive(Debug, Clone)]
pub struct LyapunovCandidate {
    base: BaseFunction,
    net: DiffeoNet,
}

impl LyapunovCandidate {
    pub fn new(base: BaseFunction, net: DiffeoNet) -> Result<Self> {
        if let Some(n) = base.dim() {
            if n != net.dim() {
                return Err(Error::InvalidArgument(format!(
                    "base function dimension {n} does not match net dimension {}",
                    net.dim()
                )));
            }
        }
        Ok(Self { base, net })
    }

    /// Identity candidate (empty net) for a base function.
    pub fn identity(base: BaseFunction, dim: usize) -> Result<Self> {
        Self::new(base, DiffeoNet::identity(dim))
    }

    pub fn base(&self) -> &BaseFunction {
        &self.base
    }

    pub fn net(&self) -> &DiffeoNet {
        &self.net
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    /// `V(x) = V_b(Φ(x))`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.base.value(&self.net.forward(x)?)
    }

    /// `∇V(x) = J_Φ(x)^T ∇V_b(Φ(x))`.
    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let trace = self.net.forward_trace(x)?;
        let base_grad = self.base.grad(trace.last().expect("trace non-empty"))?;
        self.net.pull_back(&trace, &base_grad)
    }

    /// Value and gradient in one forward pass.
    pub fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let trace = self.net.forward_trace(x)?;
        let z = trace.last().expect("trace non-empty");
        let value = self.base.value(z)?;
        let grad = self.net.pull_back(&trace, &self.base.grad(z)?)?;
        Ok((value, grad))
    }

    /// `V̇(x) = ∇V(x)^T ẋ`.
    pub fn directional_derivative(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<f64> {
        Ok(self.grad(x)?.dot(xdot))
    }

    /// Empirical Lyapunov risk over a dataset.
    ///
    /// Attractor-flagged samples contribute `|∇V^T ẋ|` in both modes.
    pub fn risk(&self, data: &TrajectoryDataset, mode: RiskMode, hinge_margin: f64) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("risk of an empty dataset".into()));
        }
        if data.dim() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "dataset dimension {} does not match candidate dimension {}",
                data.dim(),
                self.dim()
            )));
        }
        let mut total = 0.0;
        for s in data.samples() {
            let dd = self.directional_derivative(&s.position, &s.velocity)?;
            total += per_sample_risk(dd, s.attractor, mode, hinge_margin, s.velocity.norm());
        }
        if !total.is_finite() {
            return Err(Error::Numeric("risk is not finite".into()));
        }
        Ok(total)
    }

    /// Counts descent violations (`∇V^T ẋ >= 0`) among samples farther than
    /// `exclusion_radius` from the attractor set; flagged attractor samples
    /// are always excluded from the count.
    pub fn violation_rate(
        &self,
        data: &TrajectoryDataset,
        exclusion_radius: f64,
    ) -> Result<ViolationReport> {
        if data.is_empty() {
            return Err(Error::InvalidArgument(
                "violation rate of an empty dataset".into(),
            ));
        }
        if exclusion_radius < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "exclusion radius must be non-negative, got {exclusion_radius}"
            )));
        }
        let mut total = 0usize;
        let mut violating = 0usize;
        let mut dd_min = f64::INFINITY;
        let mut dd_max = f64::NEG_INFINITY;
        let mut dd_sum = 0.0;
        for s in data.samples() {
            if s.attractor || self.base.attractor_distance(&s.position)? <= exclusion_radius {
                continue;
            }
            let dd = self.directional_derivative(&s.position, &s.velocity)?;
            total += 1;
            if dd >= 0.0 {
                violating += 1;
            }
            dd_min = dd_min.min(dd);
            dd_max = dd_max.max(dd);
            dd_sum += dd;
        }
        Ok(ViolationReport {
            total_points: total,
            violating_points: violating,
            violation_rate: if total == 0 {
                0.0
            } else {
                100.0 * violating as f64 / total as f64
            },
            dd_min: if total == 0 { 0.0 } else { dd_min },
            dd_mean: if total == 0 { 0.0 } else { dd_sum / total as f64 },
            dd_max: if total == 0 { 0.0 } else { dd_max },
        })
    }

    /// Per-sample directional derivatives (for machine-readable reports);
    /// `None` for samples excluded by the attractor flag or radius.
    pub fn per_sample_derivatives(
        &self,
        data: &TrajectoryDataset,
        exclusion_radius: f64,
    ) -> Result<Vec<(f64, bool)>> {
        let mut out = Vec::with_capacity(data.len());
        for s in data.samples() {
            let dd = self.directional_derivative(&s.position, &s.velocity)?;
            let excluded = s.attractor
                || self.base.attractor_distance(&s.position)? <= exclusion_radius;
            out.push((dd, excluded));
        }
        Ok(out)
    }

    /// Writes a grid evaluation of the candidate (value, gradient norm, and
    /// optionally `∇V^T f` for a vector field) as a text table with a
    /// metadata block. Node order is row-major with axis 0 fastest.
    pub fn export_grid(
        &self,
        bounds: &[(f64, f64)],
        resolution: &[usize],
        field: Option<&dyn Fn(&DVector<f64>) -> Result<DVector<f64>>>,
        writer: &mut dyn std::io::Write,
    ) -> Result<()> {
        let n = self.dim();
        if bounds.len() != n || resolution.len() != n {
            return Err(Error::InvalidArgument(format!(
                "need {n} bounds and resolutions, got {} and {}",
                bounds.len(),
                resolution.len()
            )));
        }
        for (axis, ((lo, hi), res)) in bounds.iter().zip(resolution).enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis}: lower bound {lo} must be below upper bound {hi}"
                )));
            }
            if *res < 2 {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis}: resolution must be at least 2, got {res}"
                )));
            }
        }

        writeln!(writer, "# ddrbfn grid v1")?;
        writeln!(writer, "# dim {n}")?;
        for (axis, ((lo, hi), res)) in bounds.iter().zip(resolution).enumerate() {
            writeln!(writer, "# axis {axis} lo {lo} hi {hi} res {res}")?;
        }
        for j in 1..=n {
            write!(writer, "{}x{j}", if j == 1 { "" } else { "," })?;
        }
        write!(writer, ",V,gradnorm")?;
        if field.is_some() {
            write!(writer, ",Vdot")?;
        }
        writeln!(writer)?;

        let mut index = vec![0usize; n];
        loop {
            let x = DVector::from_fn(n, |j, _| {
                let (lo, hi) = bounds[j];
                lo + (hi - lo) * index[j] as f64 / (resolution[j] - 1) as f64
            });
            let (value, grad) = self.value_grad(&x)?;
            for v in x.iter() {
                write!(writer, "{v},")?;
            }
            write!(writer, "{value},{}", grad.norm())?;
            if let Some(f) = field {
                write!(writer, ",{}", grad.dot(&f(&x)?))?;
            }
            writeln!(writer)?;

            // Row-major advance, axis 0 fastest.
            let mut axis = 0;
            loop {
                index[axis] += 1;
                if index[axis] < resolution[axis] {
                    break;
                }
                index[axis] = 0;
                axis += 1;
                if axis == n {
                    return Ok(());
                }
            }
        }
    }
}

fn per_sample_risk(dd: f64, attractor: bool, mode: RiskMode, margin: f64, speed: f64) -> f64 {
    if attractor {
        dd.abs()
    } else {
        match mode {
            RiskMode::Raw => dd,
            RiskMode::Hinge => (dd + margin * speed).max(0.0),
        }
    }
}

/// Descent-condition summary over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    /// Samples actually evaluated (exclusions removed).
    pub total_points: usize,
    pub violating_points: usize,
    /// `100 * violating / total`, in percent.
    pub violation_rate: f64,
    pub dd_min: f64,
    pub dd_mean: f64,
    pub dd_max: f64,
}

impl std::fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "violations: {}/{} ({:.2}%), dV range [{:.3e}, {:.3e}], mean {:.3e}",
            self.violating_points,
            self.total_points,
            self.violation_rate,
            self.dd_min,
            self.dd_max,
            self.dd_mean
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::diffeo::testutil::random_net;
    use approx::assert_relative_eq;
    use rand::Rng as _;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn point_candidate(net: DiffeoNet) -> LyapunovCandidate {
        LyapunovCandidate::new(BaseFunction::point_attractor(0.1).unwrap(), net).unwrap()
    }

    fn dataset_of(samples: Vec<Sample>) -> TrajectoryDataset {
        TrajectoryDataset::new(2, samples, "test").unwrap()
    }

    fn sample(x: DVector<f64>, v: DVector<f64>, t: f64) -> Sample {
        Sample {
            position: x,
            velocity: v,
            trajectory_id: 0,
            timestamp: t,
            attractor: false,
        }
    }

    #[test]
    fn identity_candidate_composes_trivially() {
        let cand = point_candidate(DiffeoNet::identity(2));
        assert_relative_eq!(cand.value(&vec2(1.0, 1.0)).unwrap(), 0.2, max_relative = 1e-15);
        let g = cand.grad(&vec2(1.0, 1.0)).unwrap();
        assert_relative_eq!(g[0], 0.2, max_relative = 1e-15);
        assert_relative_eq!(g[1], 0.2, max_relative = 1e-15);
    }

    #[test]
    fn value_equals_explicit_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng, 2, 4, 5);
        let cand = point_candidate(net.clone());
        for _ in 0..200 {
            let x = DVector::from_fn(2, |_, _| 4.0 * (rng.gen::<f64>() - 0.5));
            let direct = cand.value(&x).unwrap();
            let composed = cand.base().value(&net.forward(&x).unwrap()).unwrap();
            assert_eq!(direct, composed);
        }
    }

    #[test]
    fn value_zero_when_mapped_onto_attractor_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = random_net(&mut rng, 2, 3, 4);
        let cand = point_candidate(net.clone());
        // Pick x so that Φ(x) = 0.
        let x = net.inverse(&vec2(0.0, 0.0), 1e-12, 500).unwrap();
        assert!(cand.value(&x).unwrap() <= 1e-20);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bases = vec![
            BaseFunction::point_attractor(0.1).unwrap(),
            BaseFunction::limit_cycle_ring(0.8, 0.5).unwrap(),
        ];
        for base in bases {
            let net = random_net(&mut rng, 2, 4, 5);
            let cand = LyapunovCandidate::new(base, net).unwrap();
            for _ in 0..200 {
                let x = DVector::from_fn(2, |_, _| 3.0 * (rng.gen::<f64>() - 0.5));
                let g = cand.grad(&x).unwrap();
                let h = 1e-6;
                for j in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fd =
                        (cand.value(&xp).unwrap() - cand.value(&xm).unwrap()) / (2.0 * h);
                    let rel = (fd - g[j]).abs() / (1.0 + g[j].abs());
                    assert!(rel <= 1e-5, "relative gradient error {rel}");
                }
            }
        }
    }

    #[test]
    fn grad_equals_jacobian_transpose_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = random_net(&mut rng, 2, 5, 6);
        let cand = point_candidate(net.clone());
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| 3.0 * (rng.gen::<f64>() - 0.5));
            let fast = cand.grad(&x).unwrap();
            let slow = net.jacobian(&x).unwrap().transpose()
                * cand.base().grad(&net.forward(&x).unwrap()).unwrap();
            assert!((&fast - &slow).norm() <= 1e-12 * (1.0 + slow.norm()));
        }
    }

    #[test]
    fn directional_derivative_basics() {
        let cand = point_candidate(DiffeoNet::identity(2));
        // xdot = 0 -> 0.
        assert_eq!(
            cand.directional_derivative(&vec2(1.0, 0.0), &vec2(0.0, 0.0))
                .unwrap(),
            0.0
        );
        // Hand-computed: grad = (0.2, 0), xdot = (-1, 0) -> -0.2.
        assert_relative_eq!(
            cand.directional_derivative(&vec2(1.0, 0.0), &vec2(-1.0, 0.0))
                .unwrap(),
            -0.2,
            max_relative = 1e-15
        );
        // Orthogonal velocity -> 0 within 1e-12.
        let dd = cand
            .directional_derivative(&vec2(1.0, 0.0), &vec2(0.0, 3.0))
            .unwrap();
        assert!(dd.abs() <= 1e-12);
    }

    #[test]
    fn raw_risk_single_sample() {
        let cand = point_candidate(DiffeoNet::identity(2));
        let ds = dataset_of(vec![sample(vec2(1.0, 0.0), vec2(-1.0, 0.0), 0.0)]);
        let risk = cand.risk(&ds, RiskMode::Raw, 0.0).unwrap();
        assert_relative_eq!(risk, -0.2, max_relative = 1e-15);
    }

    #[test]
    fn hinge_risk_zero_when_all_slack() {
        let cand = point_candidate(DiffeoNet::identity(2));
        // Radial inflow: dd = -0.2 ||x||^2 well below -margin ||xdot||.
        let mut samples = Vec::new();
        for k in 1..20 {
            let x = vec2(0.5 + 0.1 * k as f64, 0.3 * k as f64);
            samples.push(sample(x.clone(), -x, k as f64));
        }
        let ds = dataset_of(samples);
        assert_eq!(cand.risk(&ds, RiskMode::Hinge, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn raw_risk_is_sum_of_directional_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_net(&mut rng, 2, 3, 5);
        let cand = point_candidate(net);
        let mut samples = Vec::new();
        for k in 0..50 {
            samples.push(sample(
                DVector::from_fn(2, |_, _| 3.0 * (rng.gen::<f64>() - 0.5)),
                DVector::from_fn(2, |_, _| 2.0 * (rng.gen::<f64>() - 0.5)),
                k as f64,
            ));
        }
        let ds = dataset_of(samples);
        let risk = cand.risk(&ds, RiskMode::Raw, 0.0).unwrap();
        let mut expected = 0.0;
        for s in ds.samples() {
            expected += cand
                .directional_derivative(&s.position, &s.velocity)
                .unwrap();
        }
        assert_relative_eq!(risk, expected, max_relative = 1e-12);
    }

    #[test]
    fn attractor_samples_contribute_absolute_value() {
        let cand = point_candidate(DiffeoNet::identity(2));
        let mut s = sample(vec2(1.0, 0.0), vec2(-1.0, 0.0), 0.0);
        s.attractor = true;
        let ds = dataset_of(vec![s]);
        // |−0.2| instead of −0.2, in both modes.
        assert_relative_eq!(
            cand.risk(&ds, RiskMode::Raw, 0.0).unwrap(),
            0.2,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            cand.risk(&ds, RiskMode::Hinge, 0.01).unwrap(),
            0.2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn empty_dataset_is_an_argument_error() {
        let cand = point_candidate(DiffeoNet::identity(2));
        let ds = TrajectoryDataset::new(2, Vec::new(), "empty").unwrap();
        assert!(matches!(
            cand.risk(&ds, RiskMode::Raw, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn violation_rate_counts() {
        let cand = point_candidate(DiffeoNet::identity(2));
        // All descending.
        let mut descending = Vec::new();
        for k in 1..=10 {
            let x = vec2(0.2 * k as f64, 0.1);
            descending.push(sample(x.clone(), -x, k as f64));
        }
        let report = cand.violation_rate(&dataset_of(descending), 1e-3).unwrap();
        assert_eq!(report.violating_points, 0);
        assert_eq!(report.violation_rate, 0.0);

        // Exactly half violating.
        let mut half = Vec::new();
        for k in 1..=10 {
            let x = vec2(0.2 * k as f64, 0.0);
            let v = if k % 2 == 0 { -x.clone() } else { x.clone() };
            half.push(sample(x, v, k as f64));
        }
        let report = cand.violation_rate(&dataset_of(half), 1e-3).unwrap();
        assert_eq!(report.total_points, 10);
        assert_eq!(report.violating_points, 5);
        assert_relative_eq!(report.violation_rate, 50.0);
    }

    #[test]
    fn violation_rate_invariant_under_velocity_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = random_net(&mut rng, 2, 3, 5);
        let cand = point_candidate(net);
        let mut samples = Vec::new();
        for k in 0..200 {
            samples.push(sample(
                DVector::from_fn(2, |_, _| 3.0 * (rng.gen::<f64>() - 0.5)),
                DVector::from_fn(2, |_, _| 2.0 * (rng.gen::<f64>() - 0.5)),
                k as f64,
            ));
        }
        let base_rate = cand
            .violation_rate(&dataset_of(samples.clone()), 1e-3)
            .unwrap()
            .violation_rate;
        for scale in [1e-3, 1.0, 1e3] {
            let scaled: Vec<Sample> = samples
                .iter()
                .map(|s| {
                    let mut c = s.clone();
                    c.velocity = &s.velocity * scale;
                    c
                })
                .collect();
            let rate = cand
                .violation_rate(&dataset_of(scaled), 1e-3)
                .unwrap()
                .violation_rate;
            assert_eq!(rate, base_rate, "scale {scale} changed the rate");
        }
    }

    #[test]
    fn exclusion_radius_removes_near_attractor_points() {
        let cand = point_candidate(DiffeoNet::identity(2));
        let ds = dataset_of(vec![
            sample(vec2(1e-5, 0.0), vec2(1.0, 0.0), 0.0), // inside radius, violating
            sample(vec2(1.0, 0.0), vec2(-1.0, 0.0), 1.0), // outside, descending
        ]);
        let report = cand.violation_rate(&ds, 1e-3).unwrap();
        assert_eq!(report.total_points, 1);
        assert_eq!(report.violating_points, 0);
    }

    #[test]
    fn export_grid_symmetric_for_even_base() {
        let cand = point_candidate(DiffeoNet::identity(2));
        let mut buf = Vec::new();
        cand.export_grid(&[(-1.0, 1.0), (-1.0, 1.0)], &[5, 5], None, &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "x1,x2,V,gradnorm");
        let values: Vec<Vec<f64>> = rows[1..]
            .iter()
            .map(|r| r.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(values.len(), 25);
        // V(x) = V(-x): node k pairs with node 24-k under the row-major
        // ordering of a symmetric grid.
        for k in 0..25 {
            assert_relative_eq!(values[k][2], values[24 - k][2], max_relative = 1e-12);
        }
        // Grid minimum at the center node.
        let min_idx = (0..25)
            .min_by(|&a, &b| values[a][2].partial_cmp(&values[b][2]).unwrap())
            .unwrap();
        assert_eq!(min_idx, 12);
    }

    #[test]
    fn export_grid_deterministic_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = random_net(&mut rng, 2, 3, 4);
        let cand = point_candidate(net);
        let render = || {
            let mut buf = Vec::new();
            cand.export_grid(&[(-1.0, 1.0), (-0.5, 0.5)], &[7, 6], None, &mut buf)
                .unwrap();
            buf
        };
        assert_eq!(render(), render());
    }

    #[test]
    fn export_grid_rejects_bad_axes() {
        let cand = point_candidate(DiffeoNet::identity(2));
        let mut buf = Vec::new();
        assert!(cand
            .export_grid(&[(1.0, -1.0), (-1.0, 1.0)], &[5, 5], None, &mut buf)
            .is_err());
        assert!(cand
            .export_grid(&[(-1.0, 1.0), (-1.0, 1.0)], &[1, 5], None, &mut buf)
            .is_err());
    }

    #[test]
    fn gradient_zero_sets_coincide_with_base_preimage() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = random_net(&mut rng, 2, 4, 5);
        let cand = point_candidate(net.clone());
        for i in 0..40 {
            for j in 0..40 {
                let x = vec2(-2.0 + 0.1 * i as f64, -2.0 + 0.1 * j as f64);
                let lyap_zero = cand.grad(&x).unwrap().norm() <= 1e-9;
                let base_zero = cand
                    .base()
                    .grad(&net.forward(&x).unwrap())
                    .unwrap()
                    .norm()
                    <= 1e-9;
                assert_eq!(lyap_zero, base_zero, "zero sets disagree at {x:?}");
            }
        }
    }
}
