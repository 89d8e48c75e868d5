//! Named finite-difference suites, one per module with differentiable ops.

use super::{check_scalar_fn, CheckReport, DEFAULT_STEP};
use crate::autodiff::{
    adaptive_avg_pool, atan2, balanced_cross_entropy, bilinear_sample, bilinear_upsample, concat,
    conv2d, global_average_pool, layer_norm, mlp_forward, smooth_l1, Activation, Linear,
    ParamBuilder, ParamSet, Tensor,
};
use crate::rng::Rng;

const OP_TOL: f64 = 1e-4;

fn rand_vals(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
    let n: usize = shape.iter().product();
    ((0..n).map(|_| rng.range(lo, hi)).collect(), shape.to_vec())
}

/// Random values kept away from zero (for relu/abs kinks and divisions).
fn rand_vals_off_kink(shape: &[usize], rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
    let (mut v, s) = rand_vals(shape, -2.0, 2.0, rng);
    for x in &mut v {
        if x.abs() < 0.15 {
            *x = 0.15 * x.signum().max(0.0).mul_add(2.0, -1.0) + *x;
        }
    }
    (v, s)
}

fn report(op: &str, err: f64, tol: f64) -> CheckReport {
    CheckReport {
        op: op.to_string(),
        max_rel_err: err,
        tolerance: tol,
    }
}

/// Random-projection scalarizer: sum(out * r) exercises the full Jacobian.
fn weighted_sum(out: &Tensor<f64>, rng: &mut Rng) -> Tensor<f64> {
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.range(-1.0, 1.0)).collect();
    (out * &Tensor::from_vec(w, out.shape())).sum_all()
}

fn autodiff_suite(seed: u64) -> Vec<CheckReport> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    // elementwise binary over random shapes
    for (name, f) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
        ("div", 3),
        ("maximum", 4),
        ("minimum", 5),
    ] {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let rows = 1 + rng.below(4);
            let cols = 1 + rng.below(4);
            let a = rand_vals_off_kink(&[rows, cols], &mut rng);
            let mut b = rand_vals_off_kink(&[rows, cols], &mut rng);
            if f == 3 {
                for x in &mut b.0 {
                    *x = x.signum() * (x.abs() + 0.5);
                }
            }
            let wrng = rng.derive(7);
            let err = check_scalar_fn(&[a, b], DEFAULT_STEP, &move |ts| {
                let y = match f {
                    0 => &ts[0] + &ts[1],
                    1 => &ts[0] - &ts[1],
                    2 => &ts[0] * &ts[1],
                    3 => &ts[0] / &ts[1],
                    4 => ts[0].maximum(&ts[1]),
                    _ => ts[0].minimum(&ts[1]),
                };
                weighted_sum(&y, &mut wrng.clone())
            });
            worst = worst.max(err);
        }
        out.push(report(name, worst, OP_TOL));
    }

    // unary chain: exp/ln/sqrt/sin/cos/sigmoid/relu
    {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let a = rand_vals(&[3, 3], 0.2, 2.0, &mut rng);
            let wrng = rng.derive(11);
            let err = check_scalar_fn(&[a], DEFAULT_STEP, &move |ts| {
                let x = &ts[0];
                let y = &(&x.exp().ln() + &x.sqrt_t()) + &(&x.sin_t() * &x.cos_t());
                let z = &y + &x.sigmoid();
                weighted_sum(&z, &mut wrng.clone())
            });
            worst = worst.max(err);
        }
        out.push(report("unary(exp,ln,sqrt,sin,cos,sigmoid)", worst, OP_TOL));
    }
    {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let a = rand_vals_off_kink(&[4, 4], &mut rng);
            let wrng = rng.derive(12);
            let err = check_scalar_fn(&[a], DEFAULT_STEP, &move |ts| {
                weighted_sum(&ts[0].relu(), &mut wrng.clone())
            });
            worst = worst.max(err);
        }
        out.push(report("relu", worst, OP_TOL));
    }
    {
        let a = rand_vals(&[3], 0.3, 2.0, &mut rng);
        let b = rand_vals(&[3], 0.3, 2.0, &mut rng);
        let err = check_scalar_fn(&[a, b], DEFAULT_STEP, &|ts| {
            atan2(&ts[0], &ts[1]).sum_all()
        });
        out.push(report("atan2", err, OP_TOL));
    }

    // matmul (plain and batched)
    {
        let a = rand_vals(&[3, 4], -1.0, 1.0, &mut rng);
        let b = rand_vals(&[4, 2], -1.0, 1.0, &mut rng);
        let wrng = rng.derive(13);
        let err = check_scalar_fn(&[a, b], DEFAULT_STEP, &move |ts| {
            weighted_sum(&ts[0].matmul(&ts[1]), &mut wrng.clone())
        });
        let a3 = rand_vals(&[2, 3, 2], -1.0, 1.0, &mut rng);
        let b3 = rand_vals(&[2, 2, 3], -1.0, 1.0, &mut rng);
        let wrng2 = rng.derive(14);
        let err3 = check_scalar_fn(&[a3, b3], DEFAULT_STEP, &move |ts| {
            weighted_sum(&ts[0].matmul(&ts[1]), &mut wrng2.clone())
        });
        out.push(report("matmul", err.max(err3), OP_TOL));
    }

    // softmax / layer_norm
    {
        let a = rand_vals(&[4, 5], -3.0, 3.0, &mut rng);
        let wrng = rng.derive(15);
        let err = check_scalar_fn(&[a], DEFAULT_STEP, &move |ts| {
            weighted_sum(&ts[0].softmax(1), &mut wrng.clone())
        });
        out.push(report("softmax", err, OP_TOL));
    }
    {
        let x = rand_vals(&[3, 6], -2.0, 2.0, &mut rng);
        let g = rand_vals(&[6], 0.5, 1.5, &mut rng);
        let b = rand_vals(&[6], -0.5, 0.5, &mut rng);
        let wrng = rng.derive(16);
        let err = check_scalar_fn(&[x, g, b], DEFAULT_STEP, &move |ts| {
            weighted_sum(&layer_norm(&ts[0], &ts[1], &ts[2], 1e-5), &mut wrng.clone())
        });
        out.push(report("layer_norm", err, OP_TOL));
    }

    // shape ops: concat, slice, gather, permute, reshape
    {
        let a = rand_vals(&[2, 3], -1.0, 1.0, &mut rng);
        let b = rand_vals(&[2, 2], -1.0, 1.0, &mut rng);
        let wrng = rng.derive(17);
        let err = check_scalar_fn(&[a, b], DEFAULT_STEP, &move |ts| {
            let c = concat(&[ts[0].clone(), ts[1].clone()], 1).unwrap();
            let s = c.slice(1, 1, 4);
            let g = s.gather_rows(&[1, 0, 1]);
            let p = g.permute(&[1, 0]).reshape(&[9]);
            weighted_sum(&p, &mut wrng.clone())
        });
        out.push(report("concat/slice/gather/permute/reshape", err, OP_TOL));
    }

    // reductions
    {
        let a = rand_vals_off_kink(&[3, 4], &mut rng);
        let wrng = rng.derive(18);
        let err = check_scalar_fn(&[a], DEFAULT_STEP, &move |ts| {
            let m = ts[0].mean_axis(1);
            let s = ts[0].sum_axis(0);
            let mx = ts[0].max_axis(0);
            &(&weighted_sum(&m, &mut wrng.clone()) + &weighted_sum(&s, &mut wrng.clone()))
                + &weighted_sum(&mx, &mut wrng.clone())
        });
        out.push(report("sum/mean/max reductions", err, OP_TOL));
    }

    // mlp
    {
        let set = ParamSet::<f64>::shared();
        let pb = ParamBuilder::new(&set, 42);
        let layers = vec![Linear::new(&pb, "l0", 3, 5), Linear::new(&pb, "l1", 5, 2)];
        let w0 = layers[0].weight.to_vec();
        let b0 = layers[0].bias.to_vec();
        let w1 = layers[1].weight.to_vec();
        let b1 = layers[1].bias.to_vec();
        let x = rand_vals(&[4, 3], -1.0, 1.0, &mut rng);
        let inputs = vec![
            x,
            (w0, vec![3, 5]),
            (b0, vec![5]),
            (w1, vec![5, 2]),
            (b1, vec![2]),
        ];
        let wrng = rng.derive(19);
        let err = check_scalar_fn(&inputs, DEFAULT_STEP, &move |ts| {
            let l0 = Linear {
                weight: ts[1].clone(),
                bias: ts[2].clone(),
            };
            let l1 = Linear {
                weight: ts[3].clone(),
                bias: ts[4].clone(),
            };
            weighted_sum(&mlp_forward(&[l0, l1], &ts[0], Activation::Relu), &mut wrng.clone())
        });
        out.push(report("mlp_forward(2-layer)", err, 1e-5_f64.max(OP_TOL)));
    }

    // conv stack
    {
        let x = rand_vals(&[2, 6, 6], -1.0, 1.0, &mut rng);
        let w = rand_vals(&[3, 2, 3, 3], -0.5, 0.5, &mut rng);
        let b = rand_vals(&[3], -0.2, 0.2, &mut rng);
        let wrng = rng.derive(20);
        let err = check_scalar_fn(&[x, w, b], DEFAULT_STEP, &move |ts| {
            let y = conv2d(&ts[0], &ts[1], &ts[2], 2, 1);
            weighted_sum(&y, &mut wrng.clone())
        });
        out.push(report("conv2d(stride2,pad1)", err, OP_TOL));
    }
    {
        let x = rand_vals(&[2, 3, 3], -1.0, 1.0, &mut rng);
        let wrng = rng.derive(21);
        let err = check_scalar_fn(&[x], DEFAULT_STEP, &move |ts| {
            let up = bilinear_upsample(&ts[0], 6, 6);
            let pooled = adaptive_avg_pool(&up, 2, 2);
            &weighted_sum(&pooled, &mut wrng.clone())
                + &weighted_sum(&global_average_pool(&ts[0]), &mut wrng.clone())
        });
        out.push(report("bilinear_upsample/avg pools", err, OP_TOL));
    }
    {
        let map = rand_vals(&[4, 4, 2], -1.0, 1.0, &mut rng);
        let coords = vec![[0.3, 1.7], [2.5, 0.1], [3.0, 3.0]];
        let wrng = rng.derive(22);
        let err = check_scalar_fn(&[map], DEFAULT_STEP, &move |ts| {
            weighted_sum(&bilinear_sample(&ts[0], &coords), &mut wrng.clone())
        });
        out.push(report("bilinear_sample", err, OP_TOL));
    }

    // losses
    {
        // keep |pred - target| away from the smooth-l1 kink at 1
        let pred = rand_vals(&[3, 3], -0.4, 0.4, &mut rng);
        let target = rand_vals(&[3, 3], 1.8, 2.4, &mut rng);
        let err = check_scalar_fn(&[pred, target], DEFAULT_STEP, &|ts| {
            smooth_l1(&ts[0], &ts[1]).unwrap()
        });
        let pred2 = rand_vals(&[3, 3], -0.4, 0.4, &mut rng);
        let target2 = rand_vals(&[3, 3], -0.3, 0.3, &mut rng);
        let err2 = check_scalar_fn(&[pred2, target2], DEFAULT_STEP, &|ts| {
            smooth_l1(&ts[0], &ts[1]).unwrap()
        });
        out.push(report("smooth_l1", err.max(err2), OP_TOL));
    }
    {
        let logits = rand_vals(&[5, 2], -2.0, 2.0, &mut rng);
        let err = check_scalar_fn(&[logits], DEFAULT_STEP, &|ts| {
            balanced_cross_entropy(&ts[0], &[1, 0, 1, 1, 0], (2.0, 0.7)).unwrap()
        });
        out.push(report("balanced_cross_entropy", err, OP_TOL));
    }

    out
}

/// Suites registered for the `gradcheck` command, keyed by module name.
pub fn available_suites() -> Vec<&'static str> {
    vec!["autodiff", "geometry", "pointgen", "boxreg"]
}

pub fn run_suite(module: &str, seed: u64) -> Vec<CheckReport> {
    match module {
        "autodiff" => autodiff_suite(seed),
        "geometry" => crate::geometry::gradcheck_suite(seed),
        "pointgen" => crate::pointgen::gradcheck_suite(seed),
        "boxreg" => crate::boxreg::gradcheck_suite(seed),
        other => panic!("unknown gradcheck module {other:?}"),
    }
}

pub fn run_all(seed: u64) -> Vec<CheckReport> {
    let mut out = Vec::new();
    for m in available_suites() {
        out.extend(run_suite(m, seed));
    }
    out
}
