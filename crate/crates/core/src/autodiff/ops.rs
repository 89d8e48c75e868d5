//! Elementwise forward/backward ops and operator overloads.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{GradSink, Inner, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of the broadcast result, NumPy alignment rules.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Shape {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides mapping a flat index in `out_shape` to a flat index in `in_shape`
/// (zero stride along broadcast dimensions).
pub(crate) fn broadcast_strides(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let mut real_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..in_shape.len()).rev() {
        real_strides[pad + d] = if in_shape[d] == 1 { 0 } else { acc };
        acc *= in_shape[d];
    }
    real_strides
}

/// Iterator-free index mapper: flat index in out space -> flat index in the
/// (possibly broadcast) input.
pub(crate) struct IndexMap {
    out_shape: Vec<usize>,
    strides: Vec<usize>,
    identity: bool,
}

impl IndexMap {
    pub(crate) fn new(out_shape: &[usize], in_shape: &[usize]) -> Self {
        let identity = out_shape == in_shape;
        IndexMap {
            out_shape: out_shape.to_vec(),
            strides: broadcast_strides(out_shape, in_shape),
            identity,
        }
    }

    #[inline]
    pub(crate) fn map(&self, flat: usize) -> usize {
        if self.identity {
            return flat;
        }
        let mut rem = flat;
        let mut idx = 0usize;
        for d in (0..self.out_shape.len()).rev() {
            let c = rem % self.out_shape[d];
            rem /= self.out_shape[d];
            idx += c * self.strides[d];
        }
        idx
    }
}

pub(crate) fn binary_op<T: Scalar>(
    name: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
    df: impl Fn(T, T, T) -> (T, T) + 'static,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape(), name)?;
    let numel: usize = out_shape.iter().product();
    let av = a.values();
    let bv = b.values();
    let mut data = Vec::with_capacity(numel);
    if a.shape() == b.shape() {
        for (x, y) in av.iter().zip(bv.iter()) {
            data.push(f(*x, *y));
        }
    } else {
        let ma = IndexMap::new(&out_shape, a.shape());
        let mb = IndexMap::new(&out_shape, b.shape());
        for i in 0..numel {
            data.push(f(av[ma.map(i)], bv[mb.map(i)]));
        }
    }
    drop(av);
    drop(bv);

    let out_shape_b = out_shape.clone();
    Ok(Tensor::node(
        data,
        out_shape,
        vec![a.clone(), b.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let pa = &inner.parents[0];
            let pb = &inner.parents[1];
            let av = pa.values();
            let bv = pb.values();
            let ma = IndexMap::new(&out_shape_b, pa.shape());
            let mb = IndexMap::new(&out_shape_b, pb.shape());
            let mut da = vec![T::ZERO; av.len()];
            let mut db = vec![T::ZERO; bv.len()];
            for (i, gi) in g.iter().enumerate() {
                let ia = ma.map(i);
                let ib = mb.map(i);
                let (dx, dy) = df(av[ia], bv[ib], *gi);
                da[ia] = da[ia] + dx;
                db[ib] = db[ib] + dy;
            }
            drop(av);
            drop(bv);
            sink.accum(pa, &da);
            sink.accum(pb, &db);
        },
    ))
}

pub(crate) fn unary_op<T: Scalar>(
    a: &Tensor<T>,
    f: impl Fn(T) -> T,
    // (input value, output value, upstream grad) -> input grad
    df: impl Fn(T, T, T) -> T + 'static,
) -> Tensor<T> {
    let data: Vec<T> = a.values().iter().map(|x| f(*x)).collect();
    Tensor::node(
        data,
        a.shape().to_vec(),
        vec![a.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let p = &inner.parents[0];
            let xv = p.values();
            let yv = inner.data.borrow();
            let da: Vec<T> = (0..g.len()).map(|i| df(xv[i], yv[i], g[i])).collect();
            drop(xv);
            drop(yv);
            sink.accum(p, &da);
        },
    )
}

impl<T: Scalar> Tensor<T> {
    pub fn try_add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op("add", self, rhs, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn try_sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op("sub", self, rhs, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn try_mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op("mul", self, rhs, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    pub fn try_div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(
            "div",
            self,
            rhs,
            |x, y| x / y,
            |x, y, g| (g / y, -g * x / (y * y)),
        )
    }

    /// Elementwise maximum; on exact ties the gradient routes to `self`.
    pub fn maximum(&self, rhs: &Tensor<T>) -> Tensor<T> {
        binary_op(
            "maximum",
            self,
            rhs,
            |x, y| if x >= y { x } else { y },
            |x, y, g| if x >= y { (g, T::ZERO) } else { (T::ZERO, g) },
        )
        .expect("maximum: incompatible shapes")
    }

    /// Elementwise minimum; on exact ties the gradient routes to `self`.
    pub fn minimum(&self, rhs: &Tensor<T>) -> Tensor<T> {
        binary_op(
            "minimum",
            self,
            rhs,
            |x, y| if x <= y { x } else { y },
            |x, y, g| if x <= y { (g, T::ZERO) } else { (T::ZERO, g) },
        )
        .expect("minimum: incompatible shapes")
    }

    pub fn neg_t(&self) -> Tensor<T> {
        unary_op(self, |x| -x, |_, _, g| -g)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary_op(self, |x| x.exp(), |_, y, g| g * y)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary_op(self, |x| x.ln(), |x, _, g| g / x)
    }

    pub fn sqrt_t(&self) -> Tensor<T> {
        unary_op(
            self,
            |x| x.sqrt(),
            |_, y, g| g / (T::from_f64(2.0) * y),
        )
    }

    pub fn sin_t(&self) -> Tensor<T> {
        unary_op(self, |x| x.sin(), |x, _, g| g * x.cos())
    }

    pub fn cos_t(&self) -> Tensor<T> {
        unary_op(self, |x| x.cos(), |x, _, g| -g * x.sin())
    }

    pub fn square(&self) -> Tensor<T> {
        unary_op(self, |x| x * x, |x, _, g| g * T::from_f64(2.0) * x)
    }

    pub fn relu(&self) -> Tensor<T> {
        unary_op(
            self,
            |x| if x > T::ZERO { x } else { T::ZERO },
            |x, _, g| if x > T::ZERO { g } else { T::ZERO },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary_op(
            self,
            |x| T::ONE / (T::ONE + (-x).exp()),
            |_, y, g| g * y * (T::ONE - y),
        )
    }

    /// Multiply by a plain scalar.
    pub fn scale(&self, c: T) -> Tensor<T> {
        unary_op(self, move |x| x * c, move |_, _, g| g * c)
    }

    /// Add a plain scalar.
    pub fn shift(&self, c: T) -> Tensor<T> {
        unary_op(self, move |x| x + c, |_, _, g| g)
    }
}

/// Elementwise atan2(y, x) with gradients to both arguments.
pub fn atan2<T: Scalar>(y: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    binary_op(
        "atan2",
        y,
        x,
        |yy, xx| yy.atan2(xx),
        |yy, xx, g| {
            let denom = xx * xx + yy * yy;
            if denom == T::ZERO {
                (T::ZERO, T::ZERO)
            } else {
                (g * xx / denom, -g * yy / denom)
            }
        },
    )
    .expect("atan2: incompatible shapes")
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $try:ident) => {
        impl<'a, T: Scalar> $trait<&'a Tensor<T>> for &'a Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: &'a Tensor<T>) -> Tensor<T> {
                self.$try(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
    };
}

impl_binop!(Add, add, try_add);
impl_binop!(Sub, sub, try_sub);
impl_binop!(Mul, mul, try_mul);
impl_binop!(Div, div, try_div);

impl<T: Scalar> Neg for &Tensor<T> {
    type Output = Tensor<T>;
    fn neg(self) -> Tensor<T> {
        self.neg_t()
    }
}
