//! Neural-net building blocks: softmax, layer norm, linear/MLP layers,
//! bilinear feature sampling.

use super::param::ParamBuilder;
use super::{GradSink, Inner, Tensor};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Numerically stabilized softmax along `axis`. Entries equal to -inf
    /// get weight exactly zero (used for attention masking).
    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        assert!(axis < self.rank());
        let shape = self.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let span = shape[axis];
        let inner_len: usize = shape[axis + 1..].iter().product();

        let v = self.values();
        let mut data = vec![T::ZERO; v.len()];
        for o in 0..outer {
            for i in 0..inner_len {
                let at = |s: usize| (o * span + s) * inner_len + i;
                let mut mx = v[at(0)];
                for s in 1..span {
                    if v[at(s)] > mx {
                        mx = v[at(s)];
                    }
                }
                let mut denom = T::ZERO;
                for s in 0..span {
                    let e = (v[at(s)] - mx).exp();
                    data[at(s)] = e;
                    denom = denom + e;
                }
                for s in 0..span {
                    data[at(s)] = data[at(s)] / denom;
                }
            }
        }
        drop(v);

        Tensor::node(
            data,
            shape,
            vec![self.clone()],
            move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
                let p = &inner.parents[0];
                let y = inner.data.borrow();
                let mut gp = vec![T::ZERO; g.len()];
                for o in 0..outer {
                    for i in 0..inner_len {
                        let at = |s: usize| (o * span + s) * inner_len + i;
                        let mut dot = T::ZERO;
                        for s in 0..span {
                            dot = dot + g[at(s)] * y[at(s)];
                        }
                        for s in 0..span {
                            gp[at(s)] = y[at(s)] * (g[at(s)] - dot);
                        }
                    }
                }
                drop(y);
                sink.accum(p, &gp);
            },
        )
    }
}

/// Layer normalization over the last axis with learnable gain/offset.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Tensor<T> {
    let n = *x.shape().last().expect("layer_norm needs rank >= 1");
    assert_eq!(gamma.shape(), &[n]);
    assert_eq!(beta.shape(), &[n]);
    let rows = x.numel() / n;
    let epsilon = T::from_f64(eps);

    let xv = x.values();
    let gv = gamma.values();
    let bv = beta.values();
    let inv_n = T::ONE / T::from_usize(n);
    let mut data = vec![T::ZERO; xv.len()];
    for r in 0..rows {
        let row = &xv[r * n..(r + 1) * n];
        let mu: T = row.iter().copied().sum::<T>() * inv_n;
        let var: T = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_n;
        let rstd = T::ONE / (var + epsilon).sqrt();
        for i in 0..n {
            let xhat = (row[i] - mu) * rstd;
            data[r * n + i] = gv[i] * xhat + bv[i];
        }
    }
    drop(xv);
    drop(gv);
    drop(bv);

    Tensor::node(
        data,
        x.shape().to_vec(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let px = &inner.parents[0];
            let pg = &inner.parents[1];
            let pb = &inner.parents[2];
            let xv = px.values();
            let gv = pg.values();
            let mut dx = vec![T::ZERO; xv.len()];
            let mut dgamma = vec![T::ZERO; n];
            let mut dbeta = vec![T::ZERO; n];
            for r in 0..rows {
                let row = &xv[r * n..(r + 1) * n];
                let grow = &g[r * n..(r + 1) * n];
                let mu: T = row.iter().copied().sum::<T>() * inv_n;
                let var: T = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_n;
                let rstd = T::ONE / (var + epsilon).sqrt();
                let mut mean_dxhat = T::ZERO;
                let mut mean_dxhat_xhat = T::ZERO;
                let mut xhat = vec![T::ZERO; n];
                let mut dxhat = vec![T::ZERO; n];
                for i in 0..n {
                    xhat[i] = (row[i] - mu) * rstd;
                    dxhat[i] = grow[i] * gv[i];
                    dgamma[i] = dgamma[i] + grow[i] * xhat[i];
                    dbeta[i] = dbeta[i] + grow[i];
                    mean_dxhat = mean_dxhat + dxhat[i];
                    mean_dxhat_xhat = mean_dxhat_xhat + dxhat[i] * xhat[i];
                }
                mean_dxhat = mean_dxhat * inv_n;
                mean_dxhat_xhat = mean_dxhat_xhat * inv_n;
                for i in 0..n {
                    dx[r * n + i] = rstd * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                }
            }
            drop(xv);
            drop(gv);
            sink.accum(px, &dx);
            sink.accum(pg, &dgamma);
            sink.accum(pb, &dbeta);
        },
    )
}

/// Fully connected layer; weight is [in, out] so `x.matmul(w)` applies it.
pub struct Linear<T: Scalar = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// He-normal initialization (std = sqrt(2 / fan_in)).
    pub fn new(b: &ParamBuilder<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self::with_std(b, name, fan_in, fan_out, (2.0 / fan_in as f64).sqrt())
    }

    pub fn with_std(
        b: &ParamBuilder<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
    ) -> Self {
        Linear {
            weight: b.randn(&format!("{name}.weight"), &[fan_in, fan_out], std),
            bias: b.zeros(&format!("{name}.bias"), &[fan_out]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        &x.matmul(&self.weight) + &self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::None => x.clone(),
        }
    }
}

/// Chain of affine layers with `activation` between them (not after the
/// last): affine -> act -> affine -> ...
pub fn mlp_forward<T: Scalar>(layers: &[Linear<T>], x: &Tensor<T>, activation: Activation) -> Tensor<T> {
    assert!(!layers.is_empty(), "mlp_forward: no layers");
    for pair in layers.windows(2) {
        assert_eq!(
            pair[0].out_dim(),
            pair[1].in_dim(),
            "mlp_forward: dimension chain mismatch {} -> {}",
            pair[0].out_dim(),
            pair[1].in_dim()
        );
    }
    let mut h = layers[0].forward(x);
    for layer in &layers[1..] {
        h = layer.forward(&activation.apply(&h));
    }
    h
}

/// Bilinear interpolation of `map` [H, W, C] at continuous pixel coords
/// (u = column, v = row, both in pixel units, clamped to the border).
/// Coordinates are constants; gradients flow to the map only.
pub fn bilinear_sample<T: Scalar>(map: &Tensor<T>, coords: &[[f64; 2]]) -> Tensor<T> {
    assert_eq!(map.rank(), 3, "bilinear_sample expects [H, W, C]");
    let (h, w, c) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    // (flat index, weight) per corner, per sample
    let mut taps: Vec<[(usize, f64); 4]> = Vec::with_capacity(coords.len());
    for &[u, v] in coords {
        let uc = u.clamp(0.0, (w - 1) as f64);
        let vc = v.clamp(0.0, (h - 1) as f64);
        let x0 = uc.floor() as usize;
        let y0 = vc.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = uc - x0 as f64;
        let fy = vc - y0 as f64;
        taps.push([
            ((y0 * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
            ((y0 * w + x1) * c, (1.0 - fy) * fx),
            ((y1 * w + x0) * c, fy * (1.0 - fx)),
            ((y1 * w + x1) * c, fy * fx),
        ]);
    }

    let mv = map.values();
    let mut data = vec![T::ZERO; coords.len() * c];
    for (i, tap) in taps.iter().enumerate() {
        for &(base, wgt) in tap {
            let wgt = T::from_f64(wgt);
            if wgt == T::ZERO {
                continue;
            }
            for ch in 0..c {
                data[i * c + ch] = data[i * c + ch] + wgt * mv[base + ch];
            }
        }
    }
    drop(mv);

    let n = coords.len();
    Tensor::node(
        data,
        vec![n, c],
        vec![map.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let p = &inner.parents[0];
            let mut gp = vec![T::ZERO; p.numel()];
            for (i, tap) in taps.iter().enumerate() {
                for &(base, wgt) in tap {
                    let wgt = T::from_f64(wgt);
                    if wgt == T::ZERO {
                        continue;
                    }
                    for ch in 0..c {
                        gp[base + ch] = gp[base + ch] + wgt * g[i * c + ch];
                    }
                }
            }
            sink.accum(p, &gp);
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;

    type Tsr = Tensor<f64>;

    #[test]
    fn softmax_uniform_and_shifted() {
        let x = Tsr::from_vec(vec![0.0, 0.0], &[2]);
        assert_eq!(x.softmax(0).to_vec(), vec![0.5, 0.5]);

        let x = Tsr::from_vec(vec![0.0, 3.0f64.ln()], &[2]);
        let y = x.softmax(0).to_vec();
        assert!((y[0] - 0.25).abs() < 1e-12 && (y[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tsr::from_vec(vec![0.3, -1.2, 2.5, 0.0], &[4]);
        let xc = x.shift(123.456);
        let a = x.softmax(0).to_vec();
        let b = xc.softmax(0).to_vec();
        for (ai, bi) in a.iter().zip(&b) {
            assert!((ai - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let x = Tsr::from_vec(vec![5.0, -3.0, 0.1, 60.0, -60.0, 0.0], &[2, 3]);
        let y = x.softmax(1);
        let v = y.to_vec();
        for r in 0..2 {
            let s: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(v.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn softmax_neg_inf_gets_zero_weight() {
        let x = Tsr::from_vec(vec![1.0, f64::NEG_INFINITY, 2.0], &[3]);
        let y = x.softmax(0).to_vec();
        assert_eq!(y[1], 0.0);
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mlp_zero_weights_zero_output() {
        let set = ParamSet::<f64>::shared();
        let b = ParamBuilder::new(&set, 0);
        let layers = vec![
            Linear::with_std(&b, "l0", 3, 4, 0.0),
            Linear::with_std(&b, "l1", 4, 2, 0.0),
        ];
        let x = Tsr::from_vec(vec![1.0, -2.0, 3.0], &[1, 3]);
        let y = mlp_forward(&layers, &x, Activation::Relu);
        assert_eq!(y.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_identity_layer_reproduces_input() {
        let set = ParamSet::<f64>::shared();
        let b = ParamBuilder::new(&set, 0);
        let mut l = Linear::with_std(&b, "l0", 2, 2, 0.0);
        l.weight = Tsr::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let x = Tsr::from_vec(vec![0.7, -0.3], &[1, 2]);
        let y = mlp_forward(&[l], &x, Activation::Relu);
        assert_eq!(y.to_vec(), vec![0.7, -0.3]);
    }

    #[test]
    fn bilinear_sample_exact_on_pixel_centers() {
        // 2x2 map, 1 channel: values 1,2,3,4
        let map = Tsr::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]);
        let out = bilinear_sample(&map, &[[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]]);
        let v = out.to_vec();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 4.0);
        assert!((v[2] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_sample_grad_only_touches_sampled_pixels() {
        let map = Tsr::from_vec(vec![0.0; 9], &[3, 3, 1]).with_grad();
        let out = bilinear_sample(&map, &[[1.0, 1.0]]);
        out.sum_all().backward().unwrap();
        let g = map.grad().unwrap();
        assert_eq!(g[4], 1.0);
        assert_eq!(g.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = Tsr::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 4]);
        let gamma = Tsr::from_vec(vec![1.0; 4], &[4]);
        let beta = Tsr::zeros(&[4]);
        let y = layer_norm(&x, &gamma, &beta, 1e-12).to_vec();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
