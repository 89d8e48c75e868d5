//! Reductions: sum, mean, max.

use super::{GradSink, Inner, Tensor};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let total: T = self.values().iter().copied().sum();
        Tensor::node(
            vec![total],
            vec![],
            vec![self.clone()],
            |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                let p = &inner.parents[0];
                let gp = vec![g[0]; p.numel()];
                sink.accum(p, &gp);
            },
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        assert!(n > 0, "mean_all on empty tensor");
        self.sum_all().scale(T::ONE / T::from_usize(n))
    }

    /// Sum along one axis (axis removed from the shape).
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        assert!(axis < self.rank());
        let shape = self.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let span = shape[axis];
        let inner_len: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);

        let v = self.values();
        let mut data = vec![T::ZERO; outer * inner_len];
        for o in 0..outer {
            for s in 0..span {
                let base = (o * span + s) * inner_len;
                for i in 0..inner_len {
                    data[o * inner_len + i] = data[o * inner_len + i] + v[base + i];
                }
            }
        }
        drop(v);

        Tensor::node(
            data,
            out_shape,
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                let p = &inner.parents[0];
                let mut gp = vec![T::ZERO; p.numel()];
                for o in 0..outer {
                    for s in 0..span {
                        let base = (o * span + s) * inner_len;
                        for i in 0..inner_len {
                            gp[base + i] = g[o * inner_len + i];
                        }
                    }
                }
                sink.accum(p, &gp);
            },
        )
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor<T> {
        let span = self.shape()[axis];
        self.sum_axis(axis).scale(T::ONE / T::from_usize(span))
    }

    /// Max along one axis; the gradient routes to the first maximal element.
    pub fn max_axis(&self, axis: usize) -> Tensor<T> {
        assert!(axis < self.rank());
        let shape = self.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let span = shape[axis];
        let inner_len: usize = shape[axis + 1..].iter().product();
        assert!(span > 0, "max_axis over empty axis");
        let mut out_shape = shape.clone();
        out_shape.remove(axis);

        let v = self.values();
        let mut data = vec![T::ZERO; outer * inner_len];
        let mut argmax = vec![0usize; outer * inner_len];
        for o in 0..outer {
            for i in 0..inner_len {
                let mut best = v[(o * span) * inner_len + i];
                let mut best_s = 0usize;
                for s in 1..span {
                    let val = v[(o * span + s) * inner_len + i];
                    if val > best {
                        best = val;
                        best_s = s;
                    }
                }
                data[o * inner_len + i] = best;
                argmax[o * inner_len + i] = best_s;
            }
        }
        drop(v);

        Tensor::node(
            data,
            out_shape,
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                let p = &inner.parents[0];
                let mut gp = vec![T::ZERO; p.numel()];
                for o in 0..outer {
                    for i in 0..inner_len {
                        let s = argmax[o * inner_len + i];
                        gp[(o * span + s) * inner_len + i] = g[o * inner_len + i];
                    }
                }
                sink.accum(p, &gp);
            },
        )
    }
}
