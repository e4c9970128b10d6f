//! Benchmark helpers: deterministic construction of layers, nets, and
//! datasets shared by the criterion targets.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use ddrbfn::diffeo::DEFAULT_MARGIN;
use ddrbfn::{DiffeoNet, KernelSpec, RbfLayer};

/// Random constrained layer with the given size.
pub fn layer(seed: u64, dim: usize, neurons: usize) -> RbfLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 0.5 + 0.4 * rng.gen::<f64>();
    let spec = KernelSpec::isotropic(dim, sigma).expect("valid spec");
    let centers: Vec<DVector<f64>> = (0..neurons)
        .map(|_| DVector::from_fn(dim, |_, _| 3.0 * (rng.gen::<f64>() - 0.5)))
        .collect();
    let rho = spec.weight_bounds(neurons).expect("valid bounds");
    let weights = DMatrix::from_fn(dim, neurons, |j, _| {
        0.9 * DEFAULT_MARGIN * rho[j] * (2.0 * rng.gen::<f64>() - 1.0)
    });
    RbfLayer::new(spec, centers, weights, DEFAULT_MARGIN).expect("valid layer")
}

/// Random constrained net.
pub fn net(seed: u64, dim: usize, depth: usize, neurons: usize) -> DiffeoNet {
    let mut out = DiffeoNet::identity(dim);
    for t in 0..depth {
        out.push_layer(layer(seed.wrapping_add(t as u64), dim, neurons))
            .expect("dimensions agree");
    }
    out
}

/// Deterministic batch of evaluation points.
pub fn points(seed: u64, dim: usize, count: usize) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(dim, |_, _| 4.0 * (rng.gen::<f64>() - 0.5)))
        .collect()
}
