//! Sequence construction: merge segmented points and sampled targets into
//! the order-invariant (C_2d, F_2d, F_3d) tuples, and the 2D position
//! encoders.

use super::PointGenNet;
use crate::autodiff::{concat, mlp_forward, Activation, Linear, ParamBuilder, Tensor};
use crate::config::{PipelineConfig, PosEmb};
use crate::geometry::FrustumCloud;

/// The order-invariant sequence consumed by the attention stack. Known
/// rows carry embedded 3D coordinates; unknown (target) rows all share the
/// trainable embedding u.
pub struct PointSequence {
    /// Crop-pixel coordinates, one per row.
    pub c2d: Vec<[f64; 2]>,
    /// [m, c_i] image features sampled at c2d.
    pub f2d: Tensor,
    /// [m, d_h] 3D features.
    pub f3d: Tensor,
    /// true for the n' context points.
    pub known_mask: Vec<bool>,
}

impl PointSequence {
    pub fn len(&self) -> usize {
        self.c2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c2d.is_empty()
    }

    pub fn known_count(&self) -> usize {
        self.known_mask.iter().filter(|&&k| k).count()
    }
}

/// Build the length-m sequence from n' known points and k target pixels
/// (n' + k = m). `f2d` carries one image-feature row per sequence row
/// (known points first, then targets); the caller provides the context
/// centroid used for coordinate normalization.
pub fn build_sequence(
    net: &PointGenNet,
    known: &FrustumCloud,
    targets: &[[f64; 2]],
    f2d: Tensor,
    centroid: [f64; 3],
) -> PointSequence {
    let n_known = known.len();
    let k = targets.len();
    assert!(n_known + k >= 1, "empty sequence");
    assert_eq!(f2d.shape()[0], n_known + k, "one F_2d row per sequence row");

    let mut c2d: Vec<[f64; 2]> = known.projections.clone();
    c2d.extend_from_slice(targets);

    let scale = net.coord_scale;
    let norm: Vec<f64> = known
        .points
        .iter()
        .flat_map(|p| {
            [
                (p[0] - centroid[0]) / scale,
                (p[1] - centroid[1]) / scale,
                (p[2] - centroid[2]) / scale,
            ]
        })
        .collect();

    let d = net.unknown.numel();
    let f3d = if n_known > 0 && k > 0 {
        let known_embed = mlp_forward(
            &net.f_embed,
            &Tensor::from_vec(norm, &[n_known, 3]),
            Activation::Relu,
        );
        let ones = Tensor::full(&[k, 1], 1.0);
        let unknown_rows = ones.matmul(&net.unknown.reshape(&[1, d]));
        concat(&[known_embed, unknown_rows], 0).expect("sequence concat")
    } else if n_known > 0 {
        mlp_forward(
            &net.f_embed,
            &Tensor::from_vec(norm, &[n_known, 3]),
            Activation::Relu,
        )
    } else {
        let ones = Tensor::full(&[k, 1], 1.0);
        ones.matmul(&net.unknown.reshape(&[1, d]))
    };

    let mut known_mask = vec![true; n_known];
    known_mask.extend(std::iter::repeat_n(false, k));

    PointSequence {
        c2d,
        f2d,
        f3d,
        known_mask,
    }
}

/// Fixed sinusoidal encoding of 2D coordinates (u, v normalized to [0, 1])
/// into `dim` features: interleaved sin/cos at geometric frequencies,
/// half for u and half for v.
pub fn sinusoid_encoding(coords: &[[f64; 2]], dim: usize) -> Vec<f64> {
    assert!(dim % 4 == 0, "sinusoid dim must be a multiple of 4");
    let per_axis = dim / 2;
    let n_freq = per_axis / 2;
    let mut out = Vec::with_capacity(coords.len() * dim);
    for &[u, v] in coords {
        for (axis, x) in [u, v].into_iter().enumerate() {
            let _ = axis;
            for j in 0..n_freq {
                let freq = 10_000f64.powf(-(j as f64) / n_freq as f64) * std::f64::consts::PI;
                out.push((x * freq).sin());
                out.push((x * freq).cos());
            }
        }
    }
    out
}

/// The 2D position embedding f_pos: a 2-layer MLP by default, with the
/// sinusoid and none ablation variants behind config switches.
pub struct PosEncoder {
    variant: PosEmb,
    mlp: Option<Vec<Linear>>,
    dim: usize,
}

impl PosEncoder {
    pub fn new(b: &ParamBuilder, cfg: &PipelineConfig) -> Self {
        // the add/gating fusion paths sum features, so f_pos must emit d_h
        let dim = match cfg.fusion {
            crate::config::Fusion::Concat => cfg.pos_dim,
            _ => cfg.hidden_dim,
        };
        let mlp = match cfg.pos_emb {
            PosEmb::Mlp => Some(vec![
                Linear::new(b, "gen.pos0", 2, dim),
                Linear::new(b, "gen.pos1", dim, dim),
            ]),
            _ => None,
        };
        PosEncoder {
            variant: cfg.pos_emb,
            mlp,
            dim,
        }
    }

    /// Output width (0 for the none variant under concat fusion).
    pub fn dim(&self) -> usize {
        match self.variant {
            PosEmb::None => 0,
            _ => self.dim,
        }
    }

    /// [m, dim] encodings of crop-pixel coordinates.
    pub fn encode(&self, coords: &[[f64; 2]], crop_size: usize) -> Tensor {
        let m = coords.len();
        let s = crop_size as f64;
        let normalized: Vec<[f64; 2]> = coords.iter().map(|&[u, v]| [u / s, v / s]).collect();
        match self.variant {
            PosEmb::Mlp => {
                let flat: Vec<f64> = normalized.iter().flatten().copied().collect();
                let x = Tensor::from_vec(flat, &[m, 2]);
                mlp_forward(self.mlp.as_ref().unwrap(), &x, Activation::Relu)
            }
            PosEmb::Sinusoid => {
                Tensor::from_vec(sinusoid_encoding(&normalized, self.dim), &[m, self.dim])
            }
            PosEmb::None => Tensor::zeros(&[m, 0]),
        }
    }
}
