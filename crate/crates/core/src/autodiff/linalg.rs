//! Matrix multiplication (plain and batched) with reverse-mode support.

use super::{GradSink, Inner, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// C[m,n] += A[m,k] * B[k,n], row-major slices. i-k-j loop order keeps the
/// inner loop on contiguous rows of B and C.
pub(crate) fn mm_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::ZERO {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj = *cj + a_ip * *bj;
            }
        }
    }
}

/// C[m,k] += G[m,n] * B[k,n]^T — rows of G dotted with rows of B.
pub(crate) fn mm_abt_acc<T: Scalar>(g: &[T], b: &[T], m: usize, n: usize, k: usize, c: &mut [T]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::ZERO;
            for (gj, bj) in g_row.iter().zip(b_row) {
                acc = acc + *gj * *bj;
            }
            c[i * k + p] = c[i * k + p] + acc;
        }
    }
}

/// C[k,n] += A[m,k]^T * G[m,n].
pub(crate) fn mm_atb_acc<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::ZERO {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cj, gj) in c_row.iter_mut().zip(g_row) {
                *cj = *cj + a_ip * *gj;
            }
        }
    }
}

/// Matrix product with reverse-mode support.
///
/// Supported shapes: [m,k]x[k,n], or equal-rank batched [..,m,k]x[..,k,n]
/// with identical batch dimensions.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    let shape_err = || Error::Shape {
        op: "matmul",
        lhs: sa.clone(),
        rhs: sb.clone(),
    };
    if sa.len() < 2 || sb.len() < 2 || sa.len() != sb.len() {
        return Err(shape_err());
    }
    let rank = sa.len();
    let (m, ka) = (sa[rank - 2], sa[rank - 1]);
    let (kb, n) = (sb[rank - 2], sb[rank - 1]);
    if ka != kb || sa[..rank - 2] != sb[..rank - 2] {
        return Err(shape_err());
    }
    let k = ka;
    let batch: usize = sa[..rank - 2].iter().product();

    let av = a.values();
    let bv = b.values();
    let mut data = vec![T::ZERO; batch * m * n];
    for idx in 0..batch {
        mm_acc(
            &av[idx * m * k..(idx + 1) * m * k],
            &bv[idx * k * n..(idx + 1) * k * n],
            m,
            k,
            n,
            &mut data[idx * m * n..(idx + 1) * m * n],
        );
    }
    drop(av);
    drop(bv);

    let mut out_shape = sa[..rank - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);

    Ok(Tensor::node(
        data,
        out_shape,
        vec![a.clone(), b.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let pa = &inner.parents[0];
            let pb = &inner.parents[1];
            let av = pa.values();
            let bv = pb.values();
            // dA = G * B^T ; dB = A^T * G, per batch entry
            let mut da = vec![T::ZERO; pa.numel()];
            let mut db = vec![T::ZERO; pb.numel()];
            for idx in 0..batch {
                mm_abt_acc(
                    &g[idx * m * n..(idx + 1) * m * n],
                    &bv[idx * k * n..(idx + 1) * k * n],
                    m,
                    n,
                    k,
                    &mut da[idx * m * k..(idx + 1) * m * k],
                );
                mm_atb_acc(
                    &av[idx * m * k..(idx + 1) * m * k],
                    &g[idx * m * n..(idx + 1) * m * n],
                    m,
                    k,
                    n,
                    &mut db[idx * k * n..(idx + 1) * k * n],
                );
            }
            drop(av);
            drop(bv);
            sink.accum(pa, &da);
            sink.accum(pb, &db);
        },
    ))
}

impl<T: Scalar> Tensor<T> {
    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        matmul(self, rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}
