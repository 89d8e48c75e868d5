//! Central finite-difference verification of every differentiable op.
//!
//! The finite-difference side only ever calls forward evaluations, so it is
//! independent of the backward implementations it checks. Suites over the
//! geometry loss and the network stacks are registered in
//! [`run_suite`]; the CLI `gradcheck` command and the acceptance tests both
//! call into this module.

use crate::autodiff::{no_grad, Tensor};

/// Default central-difference step (64-bit).
pub const DEFAULT_STEP: f64 = 1e-5;

/// max over elements of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1).
pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0)
}

/// Check the gradient of `f` (a scalar-valued function of leaf tensors)
/// at the given input values. Returns the max relative error over every
/// element of every input.
///
/// `f` must be pure: it may capture constants but must read its
/// differentiated inputs only from the slice it is given.
pub fn check_scalar_fn(
    inputs: &[(Vec<f64>, Vec<usize>)],
    h: f64,
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
) -> f64 {
    // analytic gradients
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(data, shape)| Tensor::from_vec(data.clone(), shape).with_grad())
        .collect();
    let loss = f(&leaves);
    assert_eq!(loss.numel(), 1, "gradcheck target must be scalar");
    loss.backward().expect("backward failed in gradcheck");
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad_or_zeros()).collect();

    // finite differences, forward evaluations only
    let eval = |vals: &[Vec<f64>]| -> f64 {
        no_grad(|| {
            let leaves: Vec<Tensor<f64>> = vals
                .iter()
                .zip(inputs)
                .map(|(data, (_, shape))| Tensor::from_vec(data.clone(), shape))
                .collect();
            f(&leaves).item()
        })
    };

    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let mut worst = 0.0f64;
    for (ti, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = vals[ti][i];
            vals[ti][i] = orig + h;
            let up = eval(&vals);
            vals[ti][i] = orig - h;
            let down = eval(&vals);
            vals[ti][i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grad[i], fd));
        }
    }
    worst
}

/// Check gradients flowing into existing (possibly shared) parameter
/// tensors: `loss_fn` is re-evaluated while each parameter element is
/// perturbed in place. Used for network-level checks where rebuilding the
/// net from raw buffers would be unwieldy.
pub fn check_param_grads(
    params: &[Tensor<f64>],
    h: f64,
    loss_fn: &dyn Fn() -> Tensor<f64>,
) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    assert_eq!(loss.numel(), 1, "gradcheck target must be scalar");
    loss.backward().expect("backward failed in gradcheck");
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad_or_zeros()).collect();

    let mut worst = 0.0f64;
    for (p, grads) in params.iter().zip(&analytic) {
        let orig = p.to_vec();
        for i in 0..orig.len() {
            let mut bumped = orig.clone();
            bumped[i] = orig[i] + h;
            p.set_data(&bumped);
            let up = no_grad(|| loss_fn().item());
            bumped[i] = orig[i] - h;
            p.set_data(&bumped);
            let down = no_grad(|| loss_fn().item());
            p.set_data(&orig);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grads[i], fd));
        }
    }
    worst
}

/// Result of one op-level check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub op: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

mod suites;
pub use suites::{available_suites, run_all, run_suite};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::concat;
    use crate::rng::Rng;

    fn rand_input(shape: &[usize], rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
        let n: usize = shape.iter().product();
        ((0..n).map(|_| rng.range(-2.0, 2.0)).collect(), shape.to_vec())
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = Rng::new(100);
        let a = rand_input(&[3, 4], &mut rng);
        let b = rand_input(&[4, 2], &mut rng);
        let err = check_scalar_fn(&[a, b], DEFAULT_STEP, &|ts| {
            ts[0].matmul(&ts[1]).sum_all()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn concat_backward_recovers_per_input_grads() {
        let mut rng = Rng::new(101);
        let a = rand_input(&[2, 3], &mut rng);
        let b = rand_input(&[2, 2], &mut rng);
        // weight the output so each element's gradient is distinct
        let w: Vec<f64> = (0..10).map(|i| (i as f64 + 1.0) * 0.37).collect();
        let err = check_scalar_fn(&[a, b], DEFAULT_STEP, &move |ts| {
            let c = concat(&[ts[0].clone(), ts[1].clone()], 1).unwrap();
            (&c * &Tensor::from_vec(w.clone(), &[2, 5])).sum_all()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn elementwise_ops_pass_100_random_shapes() {
        let mut rng = Rng::new(7);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let rows = 1 + rng.below(4);
            let cols = 1 + rng.below(5);
            let a = rand_input(&[rows, cols], &mut rng);
            // keep |x| away from relu kink
            let a = (
                a.0.iter().map(|v| if v.abs() < 0.1 { v + 0.2 } else { *v }).collect(),
                a.1,
            );
            let b = rand_input(&[rows, cols], &mut rng);
            let b = (
                b.0.iter().map(|v| v.signum() * (v.abs() + 0.5)).collect(),
                b.1,
            );
            let err = check_scalar_fn(&[a, b], DEFAULT_STEP, &|ts| {
                let sum = &ts[0] + &ts[1];
                let prod = &ts[0] * &ts[1];
                let quot = &ts[0] / &ts[1];
                let act = ts[0].relu();
                (&(&sum + &prod) + &(&quot + &act)).sum_all()
            });
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "max rel err {worst}");
    }
}
