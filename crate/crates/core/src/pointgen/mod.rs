//! Stage 2: point generation with multimodal attention.
//!
//! Foreground pixels are sampled as targets, merged with the segmented
//! cloud into an order-invariant sequence of (2D coords, 2D features, 3D
//! features) tuples, and run through attention layers whose queries/keys
//! see all modalities while values come from the 3D features only. Target
//! rows start from a shared trainable embedding, are masked out of the
//! attention columns (they carry no 3D evidence), and are decoded to 3D
//! coordinates at the end. Training is mask-and-recover: hide a random
//! portion of known foreground points and regress their coordinates.

mod attention;
mod sequence;

pub use attention::{AttentionLayer, AttentionTrace};
pub use sequence::{build_sequence, sinusoid_encoding, PointSequence, PosEncoder};

use crate::autodiff::{mlp_forward, smooth_l1, Activation, Linear, ParamBuilder, Tensor};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::geometry::FrustumCloud;
use crate::gradcheck::CheckReport;
use crate::rng::Rng;
use crate::segmentation::centroid_of;

/// The attention point generator: embedding MLP f, position encoder f_pos,
/// attention layers, decode head g, and the shared unknown embedding u.
pub struct PointGenNet {
    pub f_embed: Vec<Linear>,
    pub pos: PosEncoder,
    pub layers: Vec<AttentionLayer>,
    pub decode: Vec<Linear>,
    pub unknown: Tensor,
    pub coord_scale: f64,
    pub crop_size: usize,
}

impl PointGenNet {
    pub fn new(b: &ParamBuilder, cfg: &PipelineConfig) -> Self {
        let d = cfg.hidden_dim;
        let f_embed = vec![
            Linear::new(b, "gen.embed0", 3, d),
            Linear::new(b, "gen.embed1", d, d),
        ];
        let pos = PosEncoder::new(b, cfg);
        let layers = (0..cfg.attn_layers)
            .map(|i| AttentionLayer::new(b, &format!("gen.layer{i}"), cfg, pos.dim()))
            .collect();
        let decode = vec![
            Linear::new(b, "gen.decode0", d, d / 2),
            Linear::with_std(b, "gen.decode1", d / 2, 3, 0.01),
        ];
        let unknown = b.randn("gen.unknown", &[d], 0.02);
        PointGenNet {
            f_embed,
            pos,
            layers,
            decode,
            unknown,
            coord_scale: cfg.coord_scale,
            crop_size: cfg.crop_size,
        }
    }

    /// Run the stack over a sequence; returns the final F_3d' state.
    pub fn run_stack(&self, seq: &PointSequence) -> Tensor {
        let pos_enc = self.pos.encode(&seq.c2d, self.crop_size);
        let mut f3d = seq.f3d.clone();
        for layer in &self.layers {
            f3d = layer.forward(&f3d, &pos_enc, &seq.f2d, &seq.known_mask, None);
        }
        f3d
    }

    /// Decode unknown rows to normalized 3D coordinates (offsets from the
    /// context centroid in units of `coord_scale`).
    pub fn decode_unknown(&self, f3d_final: &Tensor, known_mask: &[bool]) -> Tensor {
        let unknown_rows: Vec<usize> = known_mask
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(i, _)| i)
            .collect();
        if unknown_rows.is_empty() {
            return Tensor::zeros(&[0, 3]);
        }
        let rows = f3d_final.gather_rows(&unknown_rows);
        mlp_forward(&self.decode, &rows, Activation::Relu)
    }
}

/// Draw k = m - n' target pixels from the image foreground (probability
/// >= 0.5). Falls back to sampling with replacement when too few pixels
/// qualify, and to the top-k most-foreground pixels when none do. Returns
/// an empty list when n' >= m (the caller subsamples instead).
pub fn sample_targets(
    image_fg_prob: &[f64],
    width: usize,
    n_known: usize,
    m: usize,
    rng: &mut Rng,
) -> Vec<[f64; 2]> {
    assert!(m >= 1);
    if n_known >= m {
        return Vec::new();
    }
    let k = m - n_known;
    let qualifying: Vec<usize> = (0..image_fg_prob.len())
        .filter(|&i| image_fg_prob[i] >= 0.5)
        .collect();
    let pixel = |flat: usize| -> [f64; 2] { [(flat % width) as f64, (flat / width) as f64] };

    if qualifying.len() >= k {
        let chosen = rng.sample_indices(qualifying.len(), k);
        chosen.into_iter().map(|i| pixel(qualifying[i])).collect()
    } else if !qualifying.is_empty() {
        (0..k)
            .map(|_| pixel(qualifying[rng.below(qualifying.len())]))
            .collect()
    } else {
        // no foreground at all: take the k most-foreground pixels
        let mut order: Vec<usize> = (0..image_fg_prob.len()).collect();
        order.sort_by(|&a, &b| image_fg_prob[b].partial_cmp(&image_fg_prob[a]).unwrap());
        order.truncate(k.min(order.len()));
        while order.len() < k {
            order.push(order[rng.below(order.len().max(1))]);
        }
        order.into_iter().map(pixel).collect()
    }
}

/// Inference-time generation: decode 3D coordinates (meters) for targets,
/// sampling F_2d from the per-pixel feature map.
pub fn generate_points(
    net: &PointGenNet,
    known: &FrustumCloud,
    targets: &[[f64; 2]],
    pixel_features: &Tensor,
) -> Vec<[f64; 3]> {
    if targets.is_empty() {
        return Vec::new();
    }
    let centroid = centroid_of(&known.points);
    let mut c2d = known.projections.clone();
    c2d.extend_from_slice(targets);
    let f2d = crate::autodiff::bilinear_sample(pixel_features, &c2d);
    let seq = build_sequence(net, known, targets, f2d, centroid);
    let f3d = net.run_stack(&seq);
    let decoded = net.decode_unknown(&f3d, &seq.known_mask);
    let v = decoded.to_vec();
    (0..targets.len())
        .map(|i| {
            [
                centroid[0] + v[i * 3] * net.coord_scale,
                centroid[1] + v[i * 3 + 1] * net.coord_scale,
                centroid[2] + v[i * 3 + 2] * net.coord_scale,
            ]
        })
        .collect()
}

/// Outcome of one mask-and-recover evaluation: the loss plus the decoded
/// and true positions in meters (for recovery-error metrics).
pub struct MaskRecover {
    pub loss: Tensor,
    pub n_masked: usize,
    pub decoded_m: Vec<[f64; 3]>,
    pub truth_m: Vec<[f64; 3]>,
}

/// Mask a random portion of the foreground points of `cloud` (true 3D
/// coordinates withheld, features replaced by the unknown embedding u) and
/// regress them. `f2d_full` carries one image-feature row per cloud point.
/// `mask_ratio` None draws uniformly from the configured range. Returns
/// None (skip) when fewer than 2 foreground points exist.
pub fn mask_and_recover_loss(
    net: &PointGenNet,
    cloud: &FrustumCloud,
    f2d_full: &Tensor,
    rng: &mut Rng,
    mask_ratio: Option<f64>,
    ratio_range: (f64, f64),
) -> Result<Option<MaskRecover>> {
    let fg_rows: Vec<usize> = match &cloud.fg_mask {
        Some(m) => m
            .iter()
            .enumerate()
            .filter(|(_, &fg)| fg)
            .map(|(i, _)| i)
            .collect(),
        None => (0..cloud.len()).collect(),
    };
    if fg_rows.len() < 2 {
        return Ok(None);
    }
    let ratio = mask_ratio.unwrap_or_else(|| rng.range(ratio_range.0, ratio_range.1));
    let n_fg = fg_rows.len();
    // at least one foreground point always remains as context
    let k_mask = ((ratio * n_fg as f64).ceil() as usize).min(n_fg - 1);
    if k_mask == 0 {
        return Ok(Some(MaskRecover {
            loss: Tensor::scalar(0.0),
            n_masked: 0,
            decoded_m: Vec::new(),
            truth_m: Vec::new(),
        }));
    }
    let mut chosen = rng.sample_indices(n_fg, k_mask);
    chosen.sort_unstable();
    let masked_rows: Vec<usize> = chosen.iter().map(|&i| fg_rows[i]).collect();
    let masked_set: std::collections::BTreeSet<usize> = masked_rows.iter().copied().collect();
    let known_rows: Vec<usize> = (0..cloud.len()).filter(|i| !masked_set.contains(i)).collect();

    let known = cloud.select(&known_rows);
    let masked = cloud.select(&masked_rows);

    // context centroid over the known *foreground* points
    let known_fg: Vec<[f64; 3]> = known_rows
        .iter()
        .filter(|&&i| cloud.fg_mask.as_ref().map(|m| m[i]).unwrap_or(true))
        .map(|&i| cloud.points[i])
        .collect();
    let centroid = centroid_of(&known_fg);

    // sequence F_2d rows: known points first, then the masked targets
    let mut row_order = known_rows.clone();
    row_order.extend_from_slice(&masked_rows);
    let f2d = f2d_full.gather_rows(&row_order);

    let seq = build_sequence(net, &known, &masked.projections, f2d, centroid);
    let f3d = net.run_stack(&seq);
    let decoded = net.decode_unknown(&f3d, &seq.known_mask);

    let scale = net.coord_scale;
    let truth_norm: Vec<f64> = masked
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
    let target = Tensor::from_vec(truth_norm, &[k_mask, 3]);
    let loss = smooth_l1(&decoded, &target)?;

    let dv = decoded.to_vec();
    let decoded_m: Vec<[f64; 3]> = (0..k_mask)
        .map(|i| {
            [
                centroid[0] + dv[i * 3] * scale,
                centroid[1] + dv[i * 3 + 1] * scale,
                centroid[2] + dv[i * 3 + 2] * scale,
            ]
        })
        .collect();
    Ok(Some(MaskRecover {
        loss,
        n_masked: k_mask,
        decoded_m,
        truth_m: masked.points.clone(),
    }))
}

/// Finite-difference suite over the attention stack and the generation
/// loss graph, at toy sizes.
pub fn gradcheck_suite(seed: u64) -> Vec<CheckReport> {
    use crate::autodiff::ParamSet;
    use crate::gradcheck::check_param_grads;

    let cfg = PipelineConfig::toy();
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    // one attention layer end-to-end
    {
        let set = ParamSet::shared();
        let b = ParamBuilder::new(&set, seed);
        let layer = AttentionLayer::new(&b, "t", &cfg, cfg.pos_dim);
        let m = 5;
        let f3d_data: Vec<f64> = (0..m * cfg.hidden_dim).map(|_| rng.range(-1.0, 1.0)).collect();
        let pos_data: Vec<f64> = (0..m * cfg.pos_dim).map(|_| rng.range(-1.0, 1.0)).collect();
        let f2d_data: Vec<f64> =
            (0..m * cfg.image_feat_dim).map(|_| rng.range(-1.0, 1.0)).collect();
        let known = vec![true, true, false, true, false];
        let w: Vec<f64> = (0..m * cfg.hidden_dim).map(|_| rng.range(-1.0, 1.0)).collect();

        let f3d_leaf = Tensor::from_vec(f3d_data, &[m, cfg.hidden_dim]).with_grad();
        let params: Vec<Tensor> = set.borrow().iter().map(|p| p.tensor.clone()).collect();
        let mut all = params.clone();
        all.push(f3d_leaf.clone());
        let pos = Tensor::from_vec(pos_data, &[m, cfg.pos_dim]);
        let f2d = Tensor::from_vec(f2d_data, &[m, cfg.image_feat_dim]);
        let wt = Tensor::from_vec(w, &[m, cfg.hidden_dim]);
        let err = check_param_grads(&all, 1e-5, &|| {
            let y = layer.forward(&f3d_leaf, &pos, &f2d, &known, None);
            (&y * &wt).sum_all()
        });
        out.push(CheckReport {
            op: "attention_layer".into(),
            max_rel_err: err,
            tolerance: 1e-4,
        });
    }

    // full generation-loss graph on a toy sample
    {
        let set = ParamSet::shared();
        let b = ParamBuilder::new(&set, seed ^ 1);
        let net = PointGenNet::new(&b, &cfg);
        let mut cloud = FrustumCloud::default();
        let s = cfg.crop_size as f64;
        for i in 0..6 {
            cloud.points.push([
                10.0 + rng.range(-1.0, 1.0),
                rng.range(-1.0, 1.0),
                rng.range(0.0, 1.5),
            ]);
            cloud
                .projections
                .push([rng.range(1.0, s - 1.0), rng.range(1.0, s - 1.0)]);
            cloud.rgb.push([0.5, 0.5, 0.5]);
            let _ = i;
        }
        cloud.fg_mask = Some(vec![true; 6]);
        let feat_data: Vec<f64> = (0..6 * cfg.image_feat_dim)
            .map(|_| rng.range(-0.5, 0.5))
            .collect();
        let f2d_full = Tensor::from_vec(feat_data, &[6, cfg.image_feat_dim]);
        let params: Vec<Tensor> = set.borrow().iter().map(|p| p.tensor.clone()).collect();
        let mask_rng_seed = 77u64;
        let err = check_param_grads(&params, 1e-5, &|| {
            let mut mrng = Rng::new(mask_rng_seed);
            mask_and_recover_loss(&net, &cloud, &f2d_full, &mut mrng, Some(0.4), (0.1, 0.5))
                .unwrap()
                .unwrap()
                .loss
        });
        out.push(CheckReport {
            op: "mask_and_recover_loss (L_gen)".into(),
            max_rel_err: err,
            tolerance: 1e-4,
        });
    }

    out
}

#[cfg(test)]
mod tests;
