//! Shape manipulation ops: reshape, permute, concat, slice, gather.

use super::{GradSink, Inner, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn permute_buffer<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let numel = data.len();
    let mut out = Vec::with_capacity(numel);
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    for _ in 0..numel {
        let mut src = 0;
        for d in 0..rank {
            src += coords[d] * in_strides[axes[d]];
        }
        out.push(data[src]);
        // increment out-space coordinates
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    (out, out_shape)
}

impl<T: Scalar> Tensor<T> {
    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            new_shape.iter().product::<usize>(),
            self.numel(),
            "reshape: {:?} -> {:?} changes element count",
            self.shape(),
            new_shape
        );
        let old_shape = self.shape().to_vec();
        Tensor::node(
            self.to_vec(),
            new_shape.to_vec(),
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                let _ = &old_shape;
                sink.accum(&inner.parents[0], g);
            },
        )
    }

    /// Reorder axes; `axes` is a permutation of 0..rank.
    pub fn permute(&self, axes: &[usize]) -> Tensor<T> {
        assert_eq!(axes.len(), self.rank(), "permute: bad axes {axes:?}");
        let (data, out_shape) = permute_buffer(&self.values(), self.shape(), axes);
        let axes_owned = axes.to_vec();
        Tensor::node(
            data,
            out_shape,
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                // backward = permute by the inverse permutation
                let mut inverse = vec![0usize; axes_owned.len()];
                for (i, &a) in axes_owned.iter().enumerate() {
                    inverse[a] = i;
                }
                let out_shape: Vec<usize> =
                    axes_owned.iter().map(|&a| inner.parents[0].shape()[a]).collect();
                let (gp, _) = permute_buffer(g, &out_shape, &inverse);
                sink.accum(&inner.parents[0], &gp);
            },
        )
    }

    /// Swap the last two axes (matrix transpose on the trailing dims).
    pub fn transpose_last(&self) -> Tensor<T> {
        let rank = self.rank();
        assert!(rank >= 2, "transpose_last needs rank >= 2");
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(&axes)
    }

    /// Contiguous sub-range along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Tensor<T> {
        assert!(axis < self.rank() && start <= end && end <= self.shape()[axis]);
        let shape = self.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner_len: usize = shape[axis + 1..].iter().product();
        let span = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = end - start;

        let v = self.values();
        let mut data = Vec::with_capacity(outer * (end - start) * inner_len);
        for o in 0..outer {
            let base = o * span * inner_len;
            data.extend_from_slice(&v[base + start * inner_len..base + end * inner_len]);
        }
        drop(v);

        Tensor::node(
            data,
            out_shape,
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                let p = &inner.parents[0];
                let mut gp = vec![T::ZERO; p.numel()];
                let width = (end - start) * inner_len;
                for o in 0..outer {
                    let src = o * width;
                    let dst = o * span * inner_len + start * inner_len;
                    gp[dst..dst + width].copy_from_slice(&g[src..src + width]);
                }
                sink.accum(p, &gp);
            },
        )
    }

    /// Row gather on a 2D (or 1D) tensor: out[i] = self[indices[i]].
    /// Duplicate indices accumulate in the backward pass.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor<T> {
        assert!(self.rank() == 1 || self.rank() == 2, "gather_rows: rank 1 or 2");
        let row_len = if self.rank() == 2 { self.shape()[1] } else { 1 };
        let n_rows = self.shape()[0];
        for &ix in indices {
            assert!(ix < n_rows, "gather_rows: index {ix} out of {n_rows}");
        }
        let v = self.values();
        let mut data = Vec::with_capacity(indices.len() * row_len);
        for &ix in indices {
            data.extend_from_slice(&v[ix * row_len..(ix + 1) * row_len]);
        }
        drop(v);
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = indices.len();
        let idx = indices.to_vec();
        Tensor::node(
            data,
            out_shape,
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                let p = &inner.parents[0];
                let mut gp = vec![T::ZERO; p.numel()];
                for (i, &ix) in idx.iter().enumerate() {
                    for j in 0..row_len {
                        gp[ix * row_len + j] = gp[ix * row_len + j] + g[i * row_len + j];
                    }
                }
                sink.accum(p, &gp);
            },
        )
    }

    /// Scalar tensor picking one element by multi-index.
    pub fn at(&self, index: &[usize]) -> Tensor<T> {
        assert_eq!(index.len(), self.rank(), "at: index rank mismatch");
        let strides = strides_of(self.shape());
        let flat: usize = index
            .iter()
            .zip(&strides)
            .map(|(i, s)| {
                i * s
            })
            .sum();
        self.pick(flat)
    }

    /// Scalar tensor picking one element by flat index.
    pub fn pick(&self, flat: usize) -> Tensor<T> {
        assert!(flat < self.numel());
        let value = self.values()[flat];
        Tensor::node(
            vec![value],
            vec![],
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                sink.accum_at(&inner.parents[0], flat, g[0]);
            },
        )
    }
}

/// Ordered concatenation along `axis`; all other dims must agree.
pub fn concat<T: Scalar>(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if tensors.is_empty() {
        return Err(Error::contract("concat", "empty input list"));
    }
    let first = tensors[0].shape().to_vec();
    if axis >= first.len() {
        return Err(Error::contract("concat", format!("axis {axis} out of range")));
    }
    for t in tensors.iter().skip(1) {
        let s = t.shape();
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(&first)
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::Shape {
                op: "concat",
                lhs: first.clone(),
                rhs: s.to_vec(),
            });
        }
    }

    let outer: usize = first[..axis].iter().product();
    let inner_len: usize = first[axis + 1..].iter().product();
    let spans: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
    let total_span: usize = spans.iter().sum();
    let mut out_shape = first.clone();
    out_shape[axis] = total_span;

    let mut data = Vec::with_capacity(outer * total_span * inner_len);
    for o in 0..outer {
        for (t, &span) in tensors.iter().zip(&spans) {
            let v = t.values();
            let base = o * span * inner_len;
            data.extend_from_slice(&v[base..base + span * inner_len]);
        }
    }

    let spans_b = spans.clone();
    Ok(Tensor::node(
        data,
        out_shape,
        tensors.to_vec(),
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let mut grads: Vec<Vec<T>> = inner
                .parents
                .iter()
                .map(|p| vec![T::ZERO; p.numel()])
                .collect();
            let mut src = 0usize;
            for o in 0..outer {
                for (k, &span) in spans_b.iter().enumerate() {
                    let width = span * inner_len;
                    let dst = o * width;
                    grads[k][dst..dst + width].copy_from_slice(&g[src..src + width]);
                    src += width;
                }
            }
            for (p, gp) in inner.parents.iter().zip(&grads) {
                sink.accum(p, gp);
            }
        },
    ))
}
