//! The multimodal attention layer.
//!
//! Queries and keys are derived from all available information (2D position
//! encoding, 2D features, 3D features); values come from the 3D features
//! only. Target (unknown) rows are masked out of the attention columns at
//! every layer: they carry no 3D evidence and must not contribute context.
//! Pre-norm transformer layout.

use crate::autodiff::{concat, layer_norm, Linear, ParamBuilder, Tensor};
use crate::config::{Fusion, PipelineConfig};

const LN_EPS: f64 = 1e-5;

/// Internals captured for verification: attention weights and the
/// pre-projection context rows.
#[derive(Default)]
pub struct AttentionTrace {
    /// [heads, m, m] softmax weights.
    pub weights: Option<Vec<f64>>,
    /// [m, d_h] attention-weighted value rows (before the output
    /// projection and residual).
    pub context: Option<Vec<f64>>,
    /// [m, d_h] value rows.
    pub values: Option<Vec<f64>>,
}

pub struct AttentionLayer {
    fq: Linear,
    fk: Linear,
    fv: Linear,
    proj: Linear,
    ff1: Linear,
    ff2: Linear,
    ln1_gamma: Tensor,
    ln1_beta: Tensor,
    ln2_gamma: Tensor,
    ln2_beta: Tensor,
    gate: Option<Linear>,
    proj2d: Option<Linear>,
    fusion: Fusion,
    asymmetric: bool,
    heads: usize,
    d_h: usize,
}

impl AttentionLayer {
    pub fn new(b: &ParamBuilder, name: &str, cfg: &PipelineConfig, pos_dim: usize) -> Self {
        let d = cfg.hidden_dim;
        let c_i = cfg.image_feat_dim;
        let qk_in = match cfg.fusion {
            Fusion::Concat => pos_dim + c_i + d,
            Fusion::Add | Fusion::Gating => d,
        };
        let v_in = if cfg.asymmetric { d } else { qk_in };
        let (gate, proj2d) = match cfg.fusion {
            Fusion::Concat => (None, None),
            Fusion::Add => (None, Some(Linear::new(b, &format!("{name}.proj2d"), c_i, d))),
            Fusion::Gating => (
                Some(Linear::new(b, &format!("{name}.gate"), pos_dim + c_i + d, d)),
                Some(Linear::new(b, &format!("{name}.proj2d"), c_i, d)),
            ),
        };
        AttentionLayer {
            fq: Linear::new(b, &format!("{name}.query"), qk_in, d),
            fk: Linear::new(b, &format!("{name}.key"), qk_in, d),
            fv: Linear::new(b, &format!("{name}.value"), v_in, d),
            proj: Linear::new(b, &format!("{name}.proj"), d, d),
            ff1: Linear::new(b, &format!("{name}.ff1"), d, cfg.intermediate_dim),
            ff2: Linear::new(b, &format!("{name}.ff2"), cfg.intermediate_dim, d),
            ln1_gamma: b.full(&format!("{name}.ln1.gamma"), &[d], 1.0),
            ln1_beta: b.zeros(&format!("{name}.ln1.beta"), &[d]),
            ln2_gamma: b.full(&format!("{name}.ln2.gamma"), &[d], 1.0),
            ln2_beta: b.zeros(&format!("{name}.ln2.beta"), &[d]),
            gate,
            proj2d,
            fusion: cfg.fusion,
            asymmetric: cfg.asymmetric,
            heads: cfg.attn_heads,
            d_h: d,
        }
    }

    /// Combine modalities into the query/key source.
    fn qk_source(&self, pos: &Tensor, f2d: &Tensor, a: &Tensor) -> Tensor {
        match self.fusion {
            Fusion::Concat => {
                let mut parts = Vec::new();
                if pos.shape()[1] > 0 {
                    parts.push(pos.clone());
                }
                parts.push(f2d.clone());
                parts.push(a.clone());
                concat(&parts, 1).expect("qk concat")
            }
            Fusion::Add => {
                let p2 = self.proj2d.as_ref().unwrap().forward(f2d);
                let s = &p2 + a;
                if pos.shape()[1] == 0 {
                    s
                } else {
                    &s + pos
                }
            }
            Fusion::Gating => {
                let cat = concat(&[pos.clone(), f2d.clone(), a.clone()], 1).expect("gate concat");
                let z = self.gate.as_ref().unwrap().forward(&cat).sigmoid();
                let p2 = self.proj2d.as_ref().unwrap().forward(f2d);
                let one_minus = z.scale(-1.0).shift(1.0);
                &(&z * &p2) + &(&one_minus * a)
            }
        }
    }

    /// One layer: updates F_3d; C_2d and F_2d pass through unchanged.
    pub fn forward(
        &self,
        f3d: &Tensor,
        pos: &Tensor,
        f2d: &Tensor,
        known: &[bool],
        mut trace: Option<&mut AttentionTrace>,
    ) -> Tensor {
        let m = f3d.shape()[0];
        assert_eq!(known.len(), m);
        let h = self.heads;
        let dh = self.d_h / h;

        let a = layer_norm(f3d, &self.ln1_gamma, &self.ln1_beta, LN_EPS);
        let qk_src = self.qk_source(pos, f2d, &a);
        let v_src = if self.asymmetric { a.clone() } else { qk_src.clone() };

        let split = |t: &Tensor| t.reshape(&[m, h, dh]).permute(&[1, 0, 2]);
        let q = split(&self.fq.forward(&qk_src));
        let k = split(&self.fk.forward(&qk_src));
        let v_full = self.fv.forward(&v_src);
        let v = split(&v_full);

        // scores [h, m, m], then silence unknown columns
        let scale = 1.0 / (dh as f64).sqrt();
        let scores = q.matmul(&k.transpose_last()).scale(scale);
        let mask: Vec<f64> = known
            .iter()
            .map(|&is_known| if is_known { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let masked = &scores + &Tensor::from_vec(mask, &[m]);
        let attn = masked.softmax(2);

        let ctx = attn.matmul(&v).permute(&[1, 0, 2]).reshape(&[m, self.d_h]);
        if let Some(t) = trace.as_deref_mut() {
            t.weights = Some(attn.to_vec());
            t.context = Some(ctx.to_vec());
            t.values = Some(v_full.to_vec());
        }

        let attended = f3d + &self.proj.forward(&ctx);
        let b = layer_norm(&attended, &self.ln2_gamma, &self.ln2_beta, LN_EPS);
        let ff = self.ff2.forward(&self.ff1.forward(&b).relu());
        &attended + &ff
    }
}
