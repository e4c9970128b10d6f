//! Bijective residual RBF layers and their composition.
//!
//! A layer is the map `φ(x) = x + W K(x)` with `K_i(x) = k(x, c_i)` for a
//! shared Gaussian kernel. Keeping every weight inside its per-coordinate
//! box `|W_{j,i}| <= margin * rho_j` (see [`KernelSpec::weight_bound`])
//! certifies a positive Jacobian determinant everywhere, so each layer is a
//! diffeomorphism and so is any composition of them. The inverse has no
//! closed form but the boxed residual is a contraction, which makes plain
//! fixed-point iteration `x <- y - W K(x)` converge geometrically.
//!
//! The box constraint bounds the entries of the disturbance `E = -W G(x)`
//! only after scaling rows and columns by the per-coordinate derivative
//! bounds `B_j`; the determinant argument survives because a similarity
//! transform leaves determinants alone, and the contraction argument holds
//! in the correspondingly weighted norm. For isotropic kernels all `B_j`
//! agree and both statements hold in the plain Euclidean norm.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Current model file format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Default strictness margin keeping weights strictly inside the open box
/// demanded by the invertibility theorem while leaving a closed box for
/// projection-based optimization.
pub const DEFAULT_MARGIN: f64 = 0.99;

/// Default tolerance for fixed-point inversion.
pub const DEFAULT_INVERSE_TOL: f64 = 1e-10;
/// Default iteration cap for fixed-point inversion.
pub const DEFAULT_INVERSE_MAX_ITER: usize = 200;

/// One bijective residual map `φ(x) = x + W K(x)`.
///
/// Immutable after construction; the weight box is validated once here and
/// re-validated whenever a model file is loaded.
#[derive(Debug, Clone)]
pub struct RbfLayer {
    spec: KernelSpec,
    centers: Vec<DVector<f64>>,
    weights: DMatrix<f64>,
    rho: DVector<f64>,
    margin: f64,
}

impl RbfLayer {
    /// Builds a layer and checks the box constraint `|W_{j,i}| <= margin * rho_j`.
    pub fn new(
        spec: KernelSpec,
        centers: Vec<DVector<f64>>,
        weights: DMatrix<f64>,
        margin: f64,
    ) -> Result<Self> {
        let n = spec.dim();
        if centers.is_empty() {
            return Err(Error::InvalidArgument(
                "layer requires at least one center".into(),
            ));
        }
        if !(margin > 0.0 && margin < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must lie in (0, 1), got {margin}"
            )));
        }
        for (i, c) in centers.iter().enumerate() {
            if c.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "center {i} has dimension {}, expected {n}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("center {i} is not finite")));
            }
        }
        if weights.nrows() != n || weights.ncols() != centers.len() {
            return Err(Error::InvalidArgument(format!(
                "weights must be {n}x{}, got {}x{}",
                centers.len(),
                weights.nrows(),
                weights.ncols()
            )));
        }
        let rho = spec.weight_bounds(centers.len())?;
        let layer = Self {
            spec,
            centers,
            weights,
            rho,
            margin,
        };
        layer.validate_box()?;
        Ok(layer)
    }

    /// Layer with all-zero weights (the identity map).
    pub fn zeroed(spec: KernelSpec, centers: Vec<DVector<f64>>, margin: f64) -> Result<Self> {
        let n = spec.dim();
        let count = centers.len();
        Self::new(spec, centers, DMatrix::zeros(n, count), margin)
    }

    fn validate_box(&self) -> Result<()> {
        for j in 0..self.dim() {
            let cap = self.margin * self.rho[j];
            for i in 0..self.neuron_count() {
                let w = self.weights[(j, i)];
                if !w.is_finite() || w.abs() > cap {
                    return Err(Error::Validation(format!(
                        "weight ({j},{i}) = {w} violates |w| <= margin*rho = {cap}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn neuron_count(&self) -> usize {
        self.centers.len()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Per-coordinate weight bounds `rho_j` of this layer.
    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Replaces the weight matrix, re-checking the box constraint.
    pub fn with_weights(&self, weights: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.spec.clone(),
            self.centers.clone(),
            weights,
            self.margin,
        )
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "input has dimension {}, layer expects {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("input is not finite".into()));
        }
        Ok(())
    }

    /// Kernel vector `K(x)` with `K_i = k(x, c_i)`.
    pub fn kernel_vector(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let mut k = DVector::zeros(self.neuron_count());
        for (i, c) in self.centers.iter().enumerate() {
            k[i] = self.spec.eval(x, c)?;
        }
        Ok(k)
    }

    /// Kernel gradient matrix `G(x)` (`N x n`, row `i` is `∇k(x, c_i)^T`).
    pub fn grad_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut g = DMatrix::zeros(self.neuron_count(), self.dim());
        for (i, c) in self.centers.iter().enumerate() {
            let gi = self.spec.grad(x, c)?;
            for j in 0..self.dim() {
                g[(i, j)] = gi[j];
            }
        }
        Ok(g)
    }

    /// `φ(x) = x + W K(x)`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.kernel_vector(x)?;
        Ok(x + &self.weights * k)
    }

    /// Jacobian `J_φ(x) = I + W G(x)`; positive determinant under the box.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = self.grad_matrix(x)?;
        Ok(DMatrix::identity(self.dim(), self.dim()) + &self.weights * g)
    }

    /// Forward map together with the pushforward `J_φ(x) v`.
    pub fn push_forward(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let k = self.kernel_vector(x)?;
        let g = self.grad_matrix(x)?;
        let y = x + &self.weights * k;
        let jv = v + &self.weights * (g * v);
        Ok((y, jv))
    }

    /// Pullback `J_φ(x)^T w` evaluated at the *input-side* point `x`.
    pub fn pull_back(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.grad_matrix(x)?;
        Ok(w + g.transpose() * (self.weights.transpose() * w))
    }

    /// Inverts the layer by fixed-point iteration `x <- y - W K(x)`.
    ///
    /// Converges geometrically because the boxed residual is a contraction.
    /// Failure to reach `tol` within `max_iter` signals either a violated box
    /// constraint or a tolerance below achievable precision; the error
    /// carries the last residual norm.
    pub fn inverse(&self, y: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
        self.check_input(y)?;
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inverse tolerance must be positive, got {tol}"
            )));
        }
        let mut x = y.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let k = self.kernel_vector(&x)?;
            let r = &x + &self.weights * k - y;
            residual = r.norm();
            if residual <= tol {
                return Ok(x);
            }
            x -= r;
        }
        Err(Error::Numeric(format!(
            "layer inverse did not reach tol {tol} within {max_iter} iterations \
             (last residual {residual:e})"
        )))
    }
}

/// Ordered composition `Φ = φ_T ∘ … ∘ φ_1` of bijective residual layers.
#[derive(Debug, Clone)]
pub struct DiffeoNet {
    dim: usize,
    layers: Vec<RbfLayer>,
    version: u32,
}

impl DiffeoNet {
    /// The identity map on `R^dim` (no layers).
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            layers: Vec::new(),
            version: MODEL_FORMAT_VERSION,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[RbfLayer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Appends a layer (applied after all existing ones).
    pub fn push_layer(&mut self, layer: RbfLayer) -> Result<()> {
        if layer.dim() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "layer dimension {} does not match net dimension {}",
                layer.dim(),
                self.dim
            )));
        }
        self.layers.push(layer);
        Ok(())
    }

    /// `Φ(x)`, applying layers in order.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut z = x.clone();
        for layer in &self.layers {
            z = layer.forward(&z)?;
        }
        Ok(z)
    }

    /// All intermediate states `z_0 = x, z_1, ..., z_T = Φ(x)`.
    pub fn forward_trace(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("trace is non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    /// Jacobian `J_Φ(x) = J_T(z_{T-1}) ⋯ J_1(z_0)`; determinant strictly
    /// positive for constrained layers.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::identity(self.dim, self.dim);
        let mut z = x.clone();
        for layer in &self.layers {
            j = layer.jacobian(&z)? * j;
            z = layer.forward(&z)?;
        }
        Ok(j)
    }

    /// Forward map and pushforward `(Φ(x), J_Φ(x) v)` in one pass.
    pub fn push_forward(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut z = x.clone();
        let mut jv = v.clone();
        for layer in &self.layers {
            let (znext, jvnext) = layer.push_forward(&z, &jv)?;
            z = znext;
            jv = jvnext;
        }
        Ok((z, jv))
    }

    /// Pullback `J_Φ(x)^T w` given the forward trace of `x`.
    pub fn pull_back(&self, trace: &[DVector<f64>], w: &DVector<f64>) -> Result<DVector<f64>> {
        if trace.len() != self.layers.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "trace length {} does not match depth {}",
                trace.len(),
                self.layers.len()
            )));
        }
        let mut g = w.clone();
        for (t, layer) in self.layers.iter().enumerate().rev() {
            g = layer.pull_back(&trace[t], &g)?;
        }
        Ok(g)
    }

    /// `Φ^{-1}(y)` by inverting layers in reverse order.
    pub fn inverse(&self, y: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
        let mut z = y.clone();
        for layer in self.layers.iter().rev() {
            z = layer.inverse(&z, tol, max_iter)?;
        }
        Ok(z)
    }

    /// Serializes to the versioned JSON model format.
    ///
    /// Numbers carry 17 significant digits, so `serialize → deserialize →
    /// serialize` is byte-identical and values round-trip exactly.
    pub fn to_model_string(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"version\": {},\n", self.version));
        out.push_str(&format!("  \"dim\": {},\n", self.dim));
        if self.layers.is_empty() {
            out.push_str("  \"layers\": []\n");
        } else {
            out.push_str("  \"layers\": [\n");
            for (t, layer) in self.layers.iter().enumerate() {
                out.push_str("    {\n");
                out.push_str(&format!(
                    "      \"sigma\": [{}],\n",
                    row_major(layer.spec().covariance())
                ));
                let centers = centers_row_major(layer.centers());
                out.push_str(&format!("      \"centers\": [{centers}],\n"));
                out.push_str(&format!(
                    "      \"weights\": [{}],\n",
                    row_major(layer.weights())
                ));
                out.push_str(&format!(
                    "      \"margin\": {}\n",
                    fmt_f64(layer.margin())
                ));
                if t + 1 == self.layers.len() {
                    out.push_str("    }\n");
                } else {
                    out.push_str("    },\n");
                }
            }
            out.push_str("  ]\n");
        }
        out.push('}');
        out.push('\n');
        out
    }

    /// Parses and re-validates a model file; any box-constraint violation is
    /// rejected with the offending layer and entry named.
    pub fn from_model_str(text: &str) -> Result<Self> {
        let raw: RawModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<model>".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if raw.version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                raw.version
            )));
        }
        let n = raw.dim;
        if n == 0 {
            return Err(Error::Validation("model dimension must be positive".into()));
        }
        let mut net = DiffeoNet::identity(n);
        for (t, layer) in raw.layers.into_iter().enumerate() {
            let fail = |msg: String| Error::Validation(format!("layer {t}: {msg}"));
            if layer.sigma.len() != n * n {
                return Err(fail(format!(
                    "sigma has {} entries, expected {}",
                    layer.sigma.len(),
                    n * n
                )));
            }
            if layer.centers.is_empty() || layer.centers.len() % n != 0 {
                return Err(fail(format!(
                    "centers length {} is not a positive multiple of dim {n}",
                    layer.centers.len()
                )));
            }
            let count = layer.centers.len() / n;
            if layer.weights.len() != n * count {
                return Err(fail(format!(
                    "weights length {} does not match {n}x{count}",
                    layer.weights.len()
                )));
            }
            let sigma = DMatrix::from_row_slice(n, n, &layer.sigma);
            let spec = KernelSpec::new(sigma).map_err(|e| fail(e.to_string()))?;
            let centers: Vec<DVector<f64>> = (0..count)
                .map(|i| DVector::from_row_slice(&layer.centers[i * n..(i + 1) * n]))
                .collect();
            let weights = DMatrix::from_row_slice(n, count, &layer.weights);
            let built = RbfLayer::new(spec, centers, weights, layer.margin)
                .map_err(|e| fail(e.to_string()))?;
            net.push_layer(built)?;
        }
        Ok(net)
    }

    /// Writes the model to a file.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_model_string())?;
        Ok(())
    }

    /// Loads a model from a file, re-validating every constraint.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_model_str(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }
}

/// 17-significant-digit scientific notation; round-trips any finite f64.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn row_major(m: &DMatrix<f64>) -> String {
    let mut parts = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            parts.push(fmt_f64(m[(r, c)]));
        }
    }
    parts.join(", ")
}

fn centers_row_major(centers: &[DVector<f64>]) -> String {
    let mut parts = Vec::new();
    for c in centers {
        for v in c.iter() {
            parts.push(fmt_f64(*v));
        }
    }
    parts.join(", ")
}

#[derive(Deserialize)]
struct RawModel {
    version: u32,
    dim: usize,
    layers: Vec<RawLayer>,
}

#[derive(Deserialize)]
struct RawLayer {
    sigma: Vec<f64>,
    centers: Vec<f64>,
    weights: Vec<f64>,
    margin: f64,
}
