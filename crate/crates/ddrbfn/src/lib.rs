//! Learning geometrically-constrained Lyapunov(-like) functions from
//! trajectory data.
//!
//! The candidate function is a composition `V = V_b ∘ Φ` of a simple base
//! function encoding the attractor topology with a learned diffeomorphism
//! `Φ` built from residual RBF layers `x + W K(x)`. Closed-form weight
//! boxes keep every layer provably bijective, so the candidate never leaves
//! the hypothesis space of valid Lyapunov-like functions; training appends
//! layers one at a time with a receding-horizon optimizer.
//!
//! Module map:
//! - [`kernel`]: Gaussian kernels, analytic derivatives, invertibility bounds.
//! - [`diffeo`]: bijective residual layers, their composition, model files.
//! - [`base`]: base functions for point / multi-point / limit-cycle attractors.
//! - [`lyapunov`]: composite candidates, Lyapunov risk, violation metrics.
//! - [`data`]: trajectory datasets, CSV ingestion, synthetic benchmark systems.
//! - [`trainer`]: receding-horizon layer growth and diffeomorphism regression.

pub mod base;
pub mod data;
pub mod diffeo;
pub mod error;
pub mod kernel;
pub mod lyapunov;
pub mod trainer;

pub use base::BaseFunction;
pub use data::{Sample, TrajectoryDataset};
pub use diffeo::{DiffeoNet, RbfLayer};
pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub use lyapunov::{LyapunovCandidate, RiskMode, ViolationReport};
pub use trainer::{TrainConfig, TrainLog};
