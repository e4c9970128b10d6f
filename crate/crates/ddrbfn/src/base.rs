//! Topology-encoding base functions.
//!
//! A base function `V_b` is a simple surrogate that already has the geometry
//! of a valid Lyapunov-like function for its attractor class: zero exactly on
//! the attractor set, positive elsewhere, with a gradient that vanishes only
//! on the attractor set and a small set of documented degenerate loci. The
//! learned diffeomorphism supplies everything else.
//!
//! Three attractor classes are covered:
//! - a single point attractor at the origin, `V_b(x) = c x^T x`;
//! - several point attractors through a smooth soft-min of quadratic bowls,
//!   `V_b(x) = -(1/β) log Σ_i exp(-β ||x - a_i||²)`, shifted so the minimum
//!   over the attractors is zero;
//! - a limit cycle through the ring quartic `V_b(x) = c (||x||² - r²)²`,
//!   which vanishes exactly on the circle `||x|| = r` (the quartic uses
//!   `||x||²` so there is no gradient singularity at the origin).
//!
//! The soft-min construction has a vanishing-gradient ridge on the
//! equidistant set between wells, and for finite β the true well bottoms sit
//! `O(e^{-β L²})` away from the attractors (`L` = pairwise separation).
//! Choose `β L² ≳ 16` to keep both effects below any practical tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default point-attractor scale.
pub const DEFAULT_POINT_SCALE: f64 = 0.1;

/// Base function kinds with their parameters.
#[derive(Debug, Clone)]
pub enum BaseFunction {
    /// `V_b(x) = scale * x^T x`, equilibrium at the origin.
    PointAttractor { scale: f64 },
    /// Smooth soft-min of quadratic bowls centered on the attractors.
    MultiPoint {
        attractors: Vec<DVector<f64>>,
        beta: f64,
    },
    /// `V_b(x) = scale * (||x||² - radius²)²`, zero on the circle.
    LimitCycleRing { radius: f64, scale: f64 },
}

impl BaseFunction {
    pub fn point_attractor(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "point attractor scale must be positive, got {scale}"
            )));
        }
        Ok(Self::PointAttractor { scale })
    }

    pub fn multi_point(attractors: Vec<DVector<f64>>, beta: f64) -> Result<Self> {
        if attractors.is_empty() {
            return Err(Error::InvalidArgument(
                "multi-point base needs at least one attractor".into(),
            ));
        }
        let n = attractors[0].len();
        if n == 0 {
            return Err(Error::InvalidArgument("attractors must be non-empty vectors".into()));
        }
        for (i, a) in attractors.iter().enumerate() {
            if a.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "attractor {i} has dimension {}, expected {n}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("attractor {i} is not finite")));
            }
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing temperature must be positive, got {beta}"
            )));
        }
        Ok(Self::MultiPoint { attractors, beta })
    }

    pub fn limit_cycle_ring(radius: f64, scale: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ring radius must be positive, got {radius}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ring scale must be positive, got {scale}"
            )));
        }
        Ok(Self::LimitCycleRing { radius, scale })
    }

    /// Dimension pinned by the parameters, if any. Point and ring bases work
    /// in any dimension.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::MultiPoint { attractors, .. } => Some(attractors[0].len()),
            _ => None,
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if let Some(n) = self.dim() {
            if x.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "input has dimension {}, base expects {n}",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    /// Soft-min weights `s_i ∝ exp(-β d_i²)` (log-sum-exp stabilized) and the
    /// stabilized log-sum itself.
    fn softmin_parts(attractors: &[DVector<f64>], beta: f64, x: &DVector<f64>) -> (Vec<f64>, f64) {
        let exponents: Vec<f64> = attractors
            .iter()
            .map(|a| -beta * (x - a).norm_squared())
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut weights: Vec<f64> = exponents.iter().map(|e| (e - m).exp()).collect();
        for w in &weights {
            total += w;
        }
        for w in &mut weights {
            *w /= total;
        }
        // log Σ exp(e_i) = m + log(total)
        (weights, m + total.ln())
    }

    /// Raw soft-min value before the zero shift.
    fn softmin_raw(attractors: &[DVector<f64>], beta: f64, x: &DVector<f64>) -> f64 {
        let (_, lse) = Self::softmin_parts(attractors, beta, x);
        -lse / beta
    }

    /// Shift making the minimum over the attractors exactly zero.
    fn softmin_shift(attractors: &[DVector<f64>], beta: f64) -> f64 {
        attractors
            .iter()
            .map(|a| Self::softmin_raw(attractors, beta, a))
            .fold(f64::INFINITY, f64::min)
    }

    /// `V_b(x)`: zero exactly on the attractor set.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            Self::PointAttractor { scale } => scale * x.norm_squared(),
            Self::MultiPoint { attractors, beta } => {
                Self::softmin_raw(attractors, *beta, x) - Self::softmin_shift(attractors, *beta)
            }
            Self::LimitCycleRing { radius, scale } => {
                let q = x.norm_squared() - radius * radius;
                scale * q * q
            }
        })
    }

    /// Analytic gradient of [`BaseFunction::value`].
    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            Self::PointAttractor { scale } => x * (2.0 * scale),
            Self::MultiPoint { attractors, beta } => {
                // ∇V = 2 Σ s_i (x - a_i) = 2 (x - Σ s_i a_i).
                let (weights, _) = Self::softmin_parts(attractors, *beta, x);
                let mut mean = DVector::zeros(x.len());
                for (s, a) in weights.iter().zip(attractors) {
                    mean += a * *s;
                }
                (x - mean) * 2.0
            }
            Self::LimitCycleRing { radius, scale } => {
                let q = x.norm_squared() - radius * radius;
                x * (4.0 * scale * q)
            }
        })
    }

    /// Analytic Hessian (needed to differentiate the composite gradient
    /// during training).
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let n = x.len();
        Ok(match self {
            Self::PointAttractor { scale } => DMatrix::identity(n, n) * (2.0 * scale),
            Self::MultiPoint { attractors, beta } => {
                // H = 2 (I - 2β Cov_s(a)) with the softmin weights s.
                let (weights, _) = Self::softmin_parts(attractors, *beta, x);
                let mut mean = DVector::zeros(n);
                for (s, a) in weights.iter().zip(attractors) {
                    mean += a * *s;
                }
                let mut second = DMatrix::zeros(n, n);
                for (s, a) in weights.iter().zip(attractors) {
                    second += (a * a.transpose()) * *s;
                }
                let cov = second - &mean * mean.transpose();
                (DMatrix::identity(n, n) - cov * (2.0 * beta)) * 2.0
            }
            Self::LimitCycleRing { radius, scale } => {
                let q = x.norm_squared() - radius * radius;
                (DMatrix::identity(n, n) * q + x * x.transpose() * 2.0) * (4.0 * scale)
            }
        })
    }

    /// Euclidean distance from `x` to the nominal attractor set.
    pub fn attractor_distance(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            Self::PointAttractor { .. } => x.norm(),
            Self::MultiPoint { attractors, .. } => attractors
                .iter()
                .map(|a| (x - a).norm())
                .fold(f64::INFINITY, f64::min),
            Self::LimitCycleRing { radius, .. } => (x.norm() - radius).abs(),
        })
    }

    /// Whether `x` lies on a documented degenerate locus where the gradient
    /// may vanish away from the attractor set: the origin for the ring base,
    /// the near-equidistant ridge between wells for the soft-min base.
    pub fn is_degenerate_locus(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(x)?;
        Ok(match self {
            Self::PointAttractor { .. } => false,
            Self::MultiPoint { attractors, .. } => {
                if attractors.len() < 2 {
                    false
                } else {
                    let mut dists: Vec<f64> = attractors.iter().map(|a| (x - a).norm()).collect();
                    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                    let mut min_sep = f64::INFINITY;
                    for i in 0..attractors.len() {
                        for j in (i + 1)..attractors.len() {
                            min_sep = min_sep.min((&attractors[i] - &attractors[j]).norm());
                        }
                    }
                    dists[1] - dists[0] <= tol * min_sep
                }
            }
            Self::LimitCycleRing { .. } => x.norm() <= tol,
        })
    }
}
