//! Loss functions with hand-derived backward passes.

use super::{GradSink, Inner, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-element 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise, averaged over all
/// elements. An empty input yields a constant 0 with zero gradient.
pub fn smooth_l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "smooth_l1",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let n = pred.numel();
    if n == 0 {
        return Ok(Tensor::scalar(T::ZERO));
    }
    let inv_n = T::ONE / T::from_usize(n);
    let pv = pred.values();
    let tv = target.values();
    let mut total = T::ZERO;
    for (p, t) in pv.iter().zip(tv.iter()) {
        let x = *p - *t;
        let a = x.abs();
        total = total
            + if a < T::ONE {
                T::from_f64(0.5) * x * x
            } else {
                a - T::from_f64(0.5)
            };
    }
    drop(pv);
    drop(tv);

    Ok(Tensor::node(
        vec![total * inv_n],
        vec![],
        vec![pred.clone(), target.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let pp = &inner.parents[0];
            let pt = &inner.parents[1];
            let pv = pp.values();
            let tv = pt.values();
            let scale = g[0] * inv_n;
            let mut dp = vec![T::ZERO; n];
            for i in 0..n {
                let x = pv[i] - tv[i];
                let d = if x.abs() < T::ONE {
                    x
                } else if x > T::ZERO {
                    T::ONE
                } else {
                    -T::ONE
                };
                dp[i] = scale * d;
            }
            drop(pv);
            drop(tv);
            let dt: Vec<T> = dp.iter().map(|v| -*v).collect();
            sink.accum(pp, &dp);
            sink.accum(pt, &dt);
        },
    ))
}

/// Class weights n_total / (2 n_c), clipped to [0.1, 10].
pub fn class_balance_weights(n_fg: usize, n_bg: usize) -> (f64, f64) {
    let total = (n_fg + n_bg) as f64;
    let weight = |n_c: usize| -> f64 {
        if n_c == 0 {
            10.0
        } else {
            (total / (2.0 * n_c as f64)).clamp(0.1, 10.0)
        }
    };
    (weight(n_fg), weight(n_bg))
}

/// Class-weighted cross entropy on [n, 2] logits with labels in {0, 1}
/// (1 = foreground). The loss is sum(w_i * nll_i) / sum(w_i), so equal
/// weights reduce to the plain mean. An empty batch yields constant 0.
pub fn balanced_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    weights: (f64, f64),
) -> Result<Tensor<T>> {
    if logits.rank() != 2 || logits.shape()[1] != 2 {
        return Err(Error::contract(
            "balanced_cross_entropy",
            format!("logits must be [n, 2], got {:?}", logits.shape()),
        ));
    }
    let n = logits.shape()[0];
    if labels.len() != n {
        return Err(Error::Shape {
            op: "balanced_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::contract("balanced_cross_entropy", "labels must be 0 or 1"));
    }
    let (w_fg, w_bg) = weights;
    if !(w_fg > 0.0 && w_bg > 0.0) {
        return Err(Error::contract("balanced_cross_entropy", "weights must be positive"));
    }
    if n == 0 {
        return Ok(Tensor::scalar(T::ZERO));
    }

    let lv = logits.values();
    let mut total = 0.0f64;
    let mut wsum = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let l0 = lv[i * 2].as_f64();
        let l1 = lv[i * 2 + 1].as_f64();
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        let nll = lse - if y == 1 { l1 } else { l0 };
        let w = if y == 1 { w_fg } else { w_bg };
        total += w * nll;
        wsum += w;
    }
    drop(lv);

    let labels_owned = labels.to_vec();
    Ok(Tensor::node(
        vec![T::from_f64(total / wsum)],
        vec![],
        vec![logits.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let p = &inner.parents[0];
            let lv = p.values();
            let scale = g[0].as_f64() / wsum;
            let mut dl = vec![T::ZERO; lv.len()];
            for (i, &y) in labels_owned.iter().enumerate() {
                let l0 = lv[i * 2].as_f64();
                let l1 = lv[i * 2 + 1].as_f64();
                let m = l0.max(l1);
                let e0 = (l0 - m).exp();
                let e1 = (l1 - m).exp();
                let z = e0 + e1;
                let (p0, p1) = (e0 / z, e1 / z);
                let w = if y == 1 { w_fg } else { w_bg };
                let t0 = if y == 0 { 1.0 } else { 0.0 };
                let t1 = 1.0 - t0;
                dl[i * 2] = T::from_f64(scale * w * (p0 - t0));
                dl[i * 2 + 1] = T::from_f64(scale * w * (p1 - t1));
            }
            drop(lv);
            sink.accum(p, &dl);
        },
    ))
}
