//! Finite-difference verification of tape gradients.
//!
//! The checker rebuilds the graph per perturbed element, so keep probe
//! tensors small. Central differences in f64 with step 1e-5 leave roughly
//! seven orders of magnitude between the expected discretization error and
//! the pass threshold used by the test suites.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};

/// Worst-case deviation between analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_abs: f64,
    pub max_rel: f64,
}

/// Uniform random tensor in `[lo, hi)` from a fixed seed.
pub fn rand_array(shape: &[usize], seed: u64, lo: f64, hi: f64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(lo..hi))
}

/// Compare tape gradients of `build`'s scalar output against central
/// finite differences over every element of every input.
///
/// `build` must construct the same computation each call; inputs are passed
/// as differentiable leaves in order.
pub fn grad_check<F>(inputs: &[ArrayD<f64>], build: F) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    grad_check_eps(inputs, 1e-5, build)
}

pub fn grad_check_eps<F>(inputs: &[ArrayD<f64>], eps: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |probe: &[ArrayD<f64>]| -> f64 {
        let mut g = Graph::<f64>::inference();
        let vars: Vec<Var> = probe.iter().map(|x| g.constant(x.clone())).collect();
        let loss = build(&mut g, &vars);
        g.scalar_value(loss)
    };

    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss);
    let analytic: Vec<ArrayD<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(x.raw_dim()))
        })
        .collect();

    let mut report = GradCheckReport {
        max_abs: 0.0,
        max_rel: 0.0,
    };
    let mut probe: Vec<ArrayD<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.as_slice().unwrap()[j];
            probe[ti].as_slice_mut().unwrap()[j] = orig + eps;
            let fp = eval(&probe);
            probe[ti].as_slice_mut().unwrap()[j] = orig - eps;
            let fm = eval(&probe);
            probe[ti].as_slice_mut().unwrap()[j] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let exact = analytic[ti].as_slice().unwrap()[j];
            let abs = (exact - numeric).abs();
            let rel = abs / exact.abs().max(numeric.abs()).max(1e-6);
            report.max_abs = report.max_abs.max(abs);
            report.max_rel = report.max_rel.max(rel);
        }
    }
    report
}
