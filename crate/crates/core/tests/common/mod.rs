//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the library's forward or backward passes: the network
//! is re-evaluated from the flat parameter vector with plain loops so that
//! finite differences check the library against a separate implementation.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refinement::model::{Activation, Architecture, Batch, ModelParameters};

/// A random small problem: parameters plus a weighted batch.
pub struct Instance {
    pub params: ModelParameters,
    pub batch: Batch,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_arch(rng: &mut ChaCha8Rng, max_dim: usize, max_hidden: usize, max_k: usize) -> Architecture {
    let d = rng.gen_range(1..=max_dim);
    let depth = rng.gen_range(0..=2);
    let hidden = (0..depth).map(|_| rng.gen_range(1..=max_hidden)).collect();
    let k = rng.gen_range(1..=max_k);
    let act = if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    Architecture::new(d, hidden, k).with_activation(act)
}

pub fn random_params(rng: &mut ChaCha8Rng, arch: &Architecture, scale: f64) -> ModelParameters {
    let flat: Vec<f64> = (0..arch.param_count()).map(|_| rng.gen_range(-scale..scale)).collect();
    ModelParameters::from_flat(arch, &flat).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

pub fn random_binary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || f64::from(u8::from(rng.gen_bool(0.5))))
}

/// Pre-activations of every hidden unit and the logits, from the flat vector.
pub fn oracle_forward(arch: &Architecture, flat: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dims = arch.dims();
    let mut offset = 0;
    let mut h = x.to_vec();
    let mut pre_all = Vec::new();
    for (l, w) in dims.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &flat[offset..offset + n_in * n_out];
        let bias = &flat[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let a: Vec<f64> = (0..n_out)
            .map(|o| bias[o] + (0..n_in).map(|i| weights[o * n_in + i] * h[i]).sum::<f64>())
            .collect();
        if l + 2 == dims.len() {
            return (pre_all, a);
        }
        pre_all.extend_from_slice(&a);
        h = a
            .iter()
            .map(|&v| match arch.activation {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
            })
            .collect();
    }
    unreachable!("architecture always has an output layer")
}

/// `softplus(z) - y z`, the unclamped BCE of a logit.
pub fn oracle_bce(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - y * z
}

/// Summed weighted BCE of the batch under a flat parameter vector.
pub fn oracle_loss(arch: &Architecture, flat: &[f64], x: &Array2<f64>, y: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (n, row) in x.rows().into_iter().enumerate() {
        let (_, z) = oracle_forward(arch, flat, row.as_slice().unwrap());
        for (k, &zk) in z.iter().enumerate() {
            total += w[[n, k]] * oracle_bce(zk, y[[n, k]]);
        }
    }
    total
}

/// Fourth-order central difference of a scalar function at `x0`.
pub fn central_diff(f: impl Fn(f64) -> f64, x0: f64, h: f64) -> f64 {
    (-f(x0 + 2.0 * h) + 8.0 * f(x0 + h) - 8.0 * f(x0 - h) + f(x0 - 2.0 * h)) / (12.0 * h)
}

/// Finite-difference gradient of the batch loss with respect to every parameter.
pub fn fd_gradient(params: &ModelParameters, batch: &Batch, h: f64) -> Vec<f64> {
    let arch = params.arch().clone();
    let base = params.to_flat();
    (0..base.len())
        .map(|p| {
            central_diff(
                |v| {
                    let mut flat = base.clone();
                    flat[p] = v;
                    oracle_loss(&arch, &flat, &batch.features, &batch.targets, &batch.weights)
                },
                base[p],
                h,
            )
        })
        .collect()
}

/// Smallest distance of any ReLU pre-activation to its kink over a batch.
/// Finite differences are only meaningful when this exceeds the probe width.
pub fn kink_margin(params: &ModelParameters, x: &Array2<f64>) -> f64 {
    if params.arch().activation != Activation::Relu {
        return f64::INFINITY;
    }
    let flat = params.to_flat();
    x.rows()
        .into_iter()
        .flat_map(|row| oracle_forward(params.arch(), &flat, row.as_slice().unwrap()).0)
        .fold(f64::INFINITY, |m, a| m.min(a.abs()))
}

pub fn max_abs_logit(params: &ModelParameters, x: &Array2<f64>) -> f64 {
    let flat = params.to_flat();
    x.rows()
        .into_iter()
        .flat_map(|row| oracle_forward(params.arch(), &flat, row.as_slice().unwrap()).1)
        .fold(0.0, |m, z| m.max(z.abs()))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// A look-ahead instance for pseudo-label derivatives.
pub struct HyperInstance {
    pub theta: ModelParameters,
    pub batch_x: Array2<f64>,
    pub batch_y: Array2<f64>,
    pub val_x: Array2<f64>,
    pub val_y: Array2<f64>,
    pub alpha: f64,
    pub scale: f64,
}

pub fn random_hyper_instance(rng: &mut ChaCha8Rng) -> HyperInstance {
    let arch = random_arch(rng, 6, 6, 4);
    let theta = random_params(rng, &arch, 0.8);
    let b = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=5);
    let batch_x = random_matrix(rng, b, arch.input_dim);
    let batch_y = Array2::from_shape_simple_fn((b, arch.output_dim), || match rng.gen_range(0..3) {
        0 => 0.0,
        1 => 1.0,
        _ => 0.5,
    });
    HyperInstance {
        val_x: random_matrix(rng, m, arch.input_dim),
        val_y: random_binary(rng, m, arch.output_dim),
        batch_x,
        batch_y,
        theta,
        alpha: rng.gen_range(0.01..0.5),
        scale: if rng.gen_bool(0.5) { 1.0 } else { 1.0 / b as f64 },
    }
}

/// Validation loss after the look-ahead step with target `(i, j)` shifted by
/// `delta`. The batch loss is `softplus(z) - p z` per entry, so the shift adds
/// `-delta * dz_ij/dtheta` (library reverse mode) to the batch gradient; this
/// lets the probe leave `[0, 1]`. The validation loss uses the oracle forward pass.
pub fn lookahead_val_loss(inst: &HyperInstance, i: usize, j: usize, delta: f64) -> f64 {
    let batch = Batch::new(inst.batch_x.clone(), inst.batch_y.clone(), None).unwrap();
    let mut g = refinement::model::grad_loss(&inst.theta, &batch).unwrap().into_vec();
    let dz = inst.theta.logit_gradient(inst.batch_x.row(i).as_slice().unwrap(), j).unwrap();
    for (gv, d) in g.iter_mut().zip(dz.values()) {
        *gv -= delta * d;
    }
    let step = refinement::model::FlatGradient::from_vec(g);
    let next = inst.theta.sgd_step(&step, inst.alpha * inst.scale).unwrap();
    let ones = Array2::ones(inst.val_y.raw_dim());
    oracle_loss(next.arch(), &next.to_flat(), &inst.val_x, &inst.val_y, &ones)
}

/// Slope of the look-ahead validation loss in target `(i, j)` by central differences.
pub fn fd_hypergradient(inst: &HyperInstance, i: usize, j: usize, h: f64) -> f64 {
    central_diff(|d| lookahead_val_loss(inst, i, j, d), 0.0, h)
}

/// `<g_val(theta'), d theta' / d p_ij>` with the Jacobian column built
/// explicitly: the batch gradient is affine in `p_ij`, so the column is
/// `-alpha * s * (grad(p_ij = 1) - grad(p_ij = 0))`, and `g_val` is the
/// oracle finite-difference gradient of the validation loss at `theta'`.
pub fn explicit_hypergradient(inst: &HyperInstance, i: usize, j: usize) -> f64 {
    let grad_at = |v: f64| {
        let mut t = inst.batch_y.clone();
        t[[i, j]] = v;
        let batch = Batch::new(inst.batch_x.clone(), t, None).unwrap();
        refinement::model::grad_loss(&inst.theta, &batch).unwrap().into_vec()
    };
    let (g1, g0) = (grad_at(1.0), grad_at(0.0));
    let column: Vec<f64> = g1
        .iter()
        .zip(&g0)
        .map(|(a, b)| -inst.alpha * inst.scale * (a - b))
        .collect();
    let batch = Batch::new(inst.batch_x.clone(), inst.batch_y.clone(), None).unwrap();
    let g = refinement::model::grad_loss(&inst.theta, &batch).unwrap();
    let next = inst.theta.sgd_step(&g, inst.alpha * inst.scale).unwrap();
    let val = Batch::new(inst.val_x.clone(), inst.val_y.clone(), None).unwrap();
    let g_val = refinement::model::grad_loss(&next, &val).unwrap().into_vec();
    g_val.iter().zip(&column).map(|(a, b)| a * b).sum()
}
