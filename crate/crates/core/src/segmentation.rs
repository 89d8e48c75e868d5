//! Stage 1: foreground/background segmentation of the frustum cloud (shared
//! MLP + max pool point net) and of the image crop (conv encoder + pyramid
//! pooling + decoder), trained with population-balanced cross entropy. The
//! image branch is supervised only at pixels receiving a LiDAR projection.

use crate::autodiff::{
    adaptive_avg_pool, balanced_cross_entropy, bilinear_upsample, class_balance_weights, concat,
    conv2d, Linear, ParamBuilder, Tensor,
};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::geometry::FrustumCloud;

/// 6-channel per-point features: centered/scaled xyz plus rgb.
pub fn point_features(frustum: &FrustumCloud, coord_scale: f64) -> Tensor {
    let n = frustum.len();
    let centroid = centroid_of(&frustum.points);
    let mut data = Vec::with_capacity(n * 6);
    for (p, rgb) in frustum.points.iter().zip(&frustum.rgb) {
        data.push((p[0] - centroid[0]) / coord_scale);
        data.push((p[1] - centroid[1]) / coord_scale);
        data.push((p[2] - centroid[2]) / coord_scale);
        data.extend_from_slice(rgb);
    }
    Tensor::from_vec(data, &[n, 6])
}

pub fn centroid_of(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len().max(1) as f64;
    let mut c = [0.0f64; 3];
    for p in points {
        c[0] += p[0];
        c[1] += p[1];
        c[2] += p[2];
    }
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Shared-MLP point network with a global max-pooled feature and a
/// per-point head. Output is [n, 2] logits for any n >= 1.
pub struct PointSegNet {
    shared: Vec<Linear>,
    head: Vec<Linear>,
}

impl PointSegNet {
    pub fn new(b: &ParamBuilder, cfg: &PipelineConfig) -> Self {
        let prefix = "seg.points";
        let mut shared = Vec::new();
        let mut dim = 6;
        for (i, &w) in cfg.point_seg_widths.iter().enumerate() {
            shared.push(Linear::new(b, &format!("{prefix}.shared{i}"), dim, w));
            dim = w;
        }
        let global = dim;
        let head = vec![
            Linear::new(b, &format!("{prefix}.head0"), dim + global, cfg.point_seg_head),
            Linear::new(b, &format!("{prefix}.head1"), cfg.point_seg_head, 2),
        ];
        PointSegNet { shared, head }
    }

    /// [n, 6] features -> [n, 2] logits.
    pub fn forward(&self, feats: &Tensor) -> Tensor {
        let n = feats.shape()[0];
        let mut h = feats.clone();
        for layer in &self.shared {
            h = layer.forward(&h).relu();
        }
        // global max-pooled descriptor, broadcast back onto every point
        let global = h.max_axis(0).reshape(&[1, h.shape()[1]]);
        let ones = Tensor::full(&[n, 1], 1.0);
        let tiled = ones.matmul(&global);
        let mut x = concat(&[h, tiled], 1).expect("concat point features");
        x = self.head[0].forward(&x).relu();
        self.head[1].forward(&x)
    }
}

/// Per-point foreground logits for a frustum cloud.
pub fn segment_points(net: &PointSegNet, frustum: &FrustumCloud, coord_scale: f64) -> Tensor {
    assert!(!frustum.is_empty(), "segment_points needs n >= 1");
    net.forward(&point_features(frustum, coord_scale))
}

struct ConvLayer {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl ConvLayer {
    fn new(
        b: &ParamBuilder,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = c_in * k * k;
        ConvLayer {
            weight: b.randn(
                &format!("{name}.weight"),
                &[c_out, c_in, k, k],
                (2.0 / fan_in as f64).sqrt(),
            ),
            bias: b.zeros(&format!("{name}.bias"), &[c_out]),
            stride,
            pad,
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        conv2d(x, &self.weight, &self.bias, self.stride, self.pad)
    }
}

/// Conv encoder (3 stages, stride 2) with pyramid pooling and a small
/// decoder back to full-resolution logits. Also exposes the per-pixel
/// feature map used for F_2d sampling and the pooled-context map Z.
pub struct ImageSegNet {
    enc: Vec<ConvLayer>,
    pyramid: Vec<ConvLayer>,
    pyramid_grids: Vec<usize>,
    fuse: ConvLayer,
    dec1: ConvLayer,
    dec2: ConvLayer,
    dec_out: ConvLayer,
    crop_size: usize,
    feat_dim: usize,
}

/// Everything the image branch computes for one crop.
pub struct ImageSegOutput {
    /// [H, W, 2] dense logits.
    pub logits: Tensor,
    /// [H, W, c_i] per-pixel features (F_2d source).
    pub pixel_features: Tensor,
    /// [c_i, H/8, W/8] pooled-context map (F_img source).
    pub z: Tensor,
}

impl ImageSegNet {
    pub fn new(b: &ParamBuilder, cfg: &PipelineConfig) -> Self {
        let prefix = "seg.image";
        assert_eq!(cfg.image_widths.len(), 3, "image encoder uses 3 stages");
        assert_eq!(
            cfg.crop_size % 8,
            0,
            "crop_size must be divisible by 8 (3 stride-2 stages)"
        );
        let mut enc = Vec::new();
        let mut dim = 3;
        for (i, &w) in cfg.image_widths.iter().enumerate() {
            enc.push(ConvLayer::new(b, &format!("{prefix}.enc{i}"), dim, w, 3, 2, 1));
            dim = w;
        }
        let branch_dim = (cfg.image_feat_dim / 4).max(4);
        let pyramid = cfg
            .pyramid_grids
            .iter()
            .enumerate()
            .map(|(i, _)| ConvLayer::new(b, &format!("{prefix}.pyr{i}"), dim, branch_dim, 1, 1, 0))
            .collect();
        let fused_in = dim + branch_dim * cfg.pyramid_grids.len();
        let fuse = ConvLayer::new(b, &format!("{prefix}.fuse"), fused_in, cfg.image_feat_dim, 3, 1, 1);
        let dec1 = ConvLayer::new(
            b,
            &format!("{prefix}.dec1"),
            cfg.image_feat_dim,
            cfg.image_widths[1],
            3,
            1,
            1,
        );
        let dec2 = ConvLayer::new(
            b,
            &format!("{prefix}.dec2"),
            cfg.image_widths[1],
            cfg.image_widths[0],
            3,
            1,
            1,
        );
        let dec_out = ConvLayer::new(b, &format!("{prefix}.dec_out"), cfg.image_widths[0], 2, 1, 1, 0);
        ImageSegNet {
            enc,
            pyramid,
            pyramid_grids: cfg.pyramid_grids.clone(),
            fuse,
            dec1,
            dec2,
            dec_out,
            crop_size: cfg.crop_size,
            feat_dim: cfg.image_feat_dim,
        }
    }

    /// crop: [H, W, 3] values in [0, 1].
    pub fn forward(&self, crop: &[f64]) -> ImageSegOutput {
        let s = self.crop_size;
        assert_eq!(crop.len(), s * s * 3, "crop must be {s}x{s}x3");
        // HWC -> CHW
        let mut chw = vec![0.0f64; 3 * s * s];
        for y in 0..s {
            for x in 0..s {
                for c in 0..3 {
                    chw[(c * s + y) * s + x] = crop[(y * s + x) * 3 + c];
                }
            }
        }
        let mut h = Tensor::from_vec(chw, &[3, s, s]);
        for layer in &self.enc {
            h = layer.forward(&h).relu();
        }
        let (hz, wz) = (h.shape()[1], h.shape()[2]);

        // pyramid context branches, upsampled back and concatenated
        let mut branches = vec![h.clone()];
        for (layer, &grid) in self.pyramid.iter().zip(&self.pyramid_grids) {
            let g = grid.min(hz).min(wz);
            let pooled = adaptive_avg_pool(&h, g, g);
            let projected = layer.forward(&pooled).relu();
            branches.push(bilinear_upsample(&projected, hz, wz));
        }
        let stacked = concat(&branches, 0).expect("pyramid concat");
        let z = self.fuse.forward(&stacked).relu();

        // per-pixel feature map at crop resolution
        let pixel_features = bilinear_upsample(&z, s, s).permute(&[1, 2, 0]);

        // logits decoder: up x2 + conv, up x2 + conv, up x2 + 1x1
        let d1 = self
            .dec1
            .forward(&bilinear_upsample(&z, hz * 2, wz * 2))
            .relu();
        let d2 = self
            .dec2
            .forward(&bilinear_upsample(&d1, hz * 4, wz * 4))
            .relu();
        let logits = self
            .dec_out
            .forward(&bilinear_upsample(&d2, s, s))
            .permute(&[1, 2, 0]);

        ImageSegOutput {
            logits,
            pixel_features,
            z,
        }
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }
}

pub fn segment_image(net: &ImageSegNet, crop: &[f64]) -> ImageSegOutput {
    net.forward(crop)
}

/// Point labels from the foreground mask (1 = foreground).
pub fn fg_labels(frustum: &FrustumCloud) -> Vec<usize> {
    frustum
        .fg_mask
        .as_ref()
        .expect("fg_mask required")
        .iter()
        .map(|&b| usize::from(b))
        .collect()
}

/// Combined stage-1 loss: balanced CE on the point logits plus balanced CE
/// on image logits sampled at projected pixels (labels copied from the
/// corresponding points; a pixel hit by several points takes the majority
/// label, ties -> foreground). Equal weighting of the two terms.
pub fn seg_loss(
    point_logits: &Tensor,
    image_logits: &Tensor,
    frustum: &FrustumCloud,
    crop_size: usize,
) -> Result<Tensor> {
    let labels = fg_labels(frustum);
    let n_fg = labels.iter().sum::<usize>();
    let n_bg = labels.len() - n_fg;
    let point_term =
        balanced_cross_entropy(point_logits, &labels, class_balance_weights(n_fg, n_bg))?;

    // vote per pixel
    let mut votes: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (uv, &label) in frustum.projections.iter().zip(&labels) {
        let x = (uv[0].round().max(0.0) as usize).min(crop_size - 1);
        let y = (uv[1].round().max(0.0) as usize).min(crop_size - 1);
        let e = votes.entry(y * crop_size + x).or_insert((0, 0));
        if label == 1 {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let mut pixel_idx = Vec::with_capacity(votes.len());
    let mut pixel_labels = Vec::with_capacity(votes.len());
    for (flat, (fg, bg)) in votes {
        pixel_idx.push(flat);
        pixel_labels.push(usize::from(fg >= bg));
    }
    let p_fg = pixel_labels.iter().sum::<usize>();
    let p_bg = pixel_labels.len() - p_fg;
    let flat_logits = image_logits.reshape(&[crop_size * crop_size, 2]);
    let sampled = flat_logits.gather_rows(&pixel_idx);
    let image_term =
        balanced_cross_entropy(&sampled, &pixel_labels, class_balance_weights(p_fg, p_bg))?;

    Ok(&point_term + &image_term)
}

/// Remove background points by thresholded foreground probability. An
/// all-background prediction keeps the single most-foreground point so the
/// pipeline never stalls.
pub fn foreground_filter(
    frustum: &FrustumCloud,
    point_logits: &Tensor,
    threshold: f64,
) -> FrustumCloud {
    let n = frustum.len();
    let probs = point_logits.softmax(1);
    let v = probs.to_vec();
    let fg_prob = |i: usize| v[i * 2 + 1];
    let mut keep: Vec<usize> = (0..n).filter(|&i| fg_prob(i) >= threshold).collect();
    if keep.is_empty() {
        let best = (0..n)
            .max_by(|&a, &b| fg_prob(a).partial_cmp(&fg_prob(b)).unwrap())
            .unwrap();
        keep.push(best);
    }
    frustum.select(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;
    use crate::rng::Rng;

    fn toy_frustum(n: usize, seed: u64) -> FrustumCloud {
        let mut rng = Rng::new(seed);
        let mut f = FrustumCloud::default();
        for i in 0..n {
            f.points.push([
                10.0 + rng.range(-2.0, 2.0),
                rng.range(-2.0, 2.0),
                rng.range(0.0, 2.0),
            ]);
            f.projections
                .push([rng.range(0.0, 15.9), rng.range(0.0, 15.9)]);
            f.rgb
                .push([rng.uniform(), rng.uniform(), rng.uniform()]);
            let _ = i;
        }
        f.fg_mask = Some((0..n).map(|i| i % 3 != 0).collect());
        f
    }

    fn nets(cfg: &PipelineConfig, seed: u64) -> (PointSegNet, ImageSegNet, std::rc::Rc<std::cell::RefCell<ParamSet>>) {
        let set = ParamSet::shared();
        let b = ParamBuilder::new(&set, seed);
        let p = PointSegNet::new(&b, cfg);
        let i = ImageSegNet::new(&b, cfg);
        (p, i, set)
    }

    #[test]
    fn permutation_equivariance_of_point_net() {
        let cfg = PipelineConfig::toy();
        let (net, _, _) = nets(&cfg, 3);
        let f = toy_frustum(9, 1);
        let out = segment_points(&net, &f, cfg.coord_scale).to_vec();

        let perm: Vec<usize> = vec![4, 0, 8, 2, 6, 1, 7, 3, 5];
        let fp = f.select(&perm);
        let out_p = segment_points(&net, &fp, cfg.coord_scale).to_vec();
        for (row, &src) in perm.iter().enumerate() {
            for c in 0..2 {
                let d = (out_p[row * 2 + c] - out[src * 2 + c]).abs();
                assert!(d < 1e-9, "row {row} ch {c} diff {d}");
            }
        }
    }

    #[test]
    fn zero_weight_point_net_is_uniform() {
        let cfg = PipelineConfig::toy();
        let set = ParamSet::shared();
        let b = ParamBuilder::with_trainable(&set, 0, &["nothing"]);
        // zero all weights by construction
        let mut net = PointSegNet::new(&b, &cfg);
        for l in net.shared.iter_mut().chain(net.head.iter_mut()) {
            l.weight = Tensor::zeros(l.weight.shape());
            l.bias = Tensor::zeros(l.bias.shape());
        }
        let f = toy_frustum(5, 2);
        let logits = segment_points(&net, &f, cfg.coord_scale);
        assert!(logits.to_vec().iter().all(|&v| v == 0.0));
        let probs = logits.softmax(1).to_vec();
        assert!(probs.iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn image_output_shapes() {
        let cfg = PipelineConfig::toy();
        let (_, net, _) = nets(&cfg, 4);
        let s = cfg.crop_size;
        let crop = vec![0.5; s * s * 3];
        let out = segment_image(&net, &crop);
        assert_eq!(out.logits.shape(), &[s, s, 2]);
        assert_eq!(out.pixel_features.shape(), &[s, s, cfg.image_feat_dim]);
        assert_eq!(out.z.shape()[0], cfg.image_feat_dim);
    }

    #[test]
    fn constant_crop_gives_constant_interior_logits() {
        let mut cfg = PipelineConfig::toy();
        cfg.crop_size = 64;
        let (_, net, _) = nets(&cfg, 5);
        let s = cfg.crop_size;
        let crop = vec![0.37; s * s * 3];
        let out = segment_image(&net, &crop);
        let v = out.logits.to_vec();
        // interior: away from padding contamination
        let lo = 28;
        let hi = 36;
        let reference = [v[(lo * s + lo) * 2], v[(lo * s + lo) * 2 + 1]];
        for y in lo..hi {
            for x in lo..hi {
                for c in 0..2 {
                    let d = (v[(y * s + x) * 2 + c] - reference[c]).abs();
                    assert!(d < 1e-9, "pixel ({x},{y}) ch {c} dev {d}");
                }
            }
        }
    }

    #[test]
    fn seg_loss_perfect_logits_near_zero() {
        let cfg = PipelineConfig::toy();
        let f = toy_frustum(8, 3);
        let labels = fg_labels(&f);
        let mut pl = Vec::new();
        for &l in &labels {
            pl.extend_from_slice(if l == 1 { &[-20.0, 20.0] } else { &[20.0, -20.0] });
        }
        let point_logits = Tensor::from_vec(pl, &[8, 2]);
        // perfect image logits: paint each projected pixel with its
        // majority vote (ties -> foreground), matching the loss contract
        let s = cfg.crop_size;
        let mut votes: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
        for (uv, &l) in f.projections.iter().zip(&labels) {
            let x = (uv[0].round() as usize).min(s - 1);
            let y = (uv[1].round() as usize).min(s - 1);
            let e = votes.entry(y * s + x).or_insert((0, 0));
            if l == 1 {
                e.0 += 1
            } else {
                e.1 += 1
            }
        }
        let mut img = vec![0.0f64; s * s * 2];
        for (&pix, &(fg, bg)) in &votes {
            let sign = if fg >= bg { 1.0 } else { -1.0 };
            img[pix * 2] = -20.0 * sign;
            img[pix * 2 + 1] = 20.0 * sign;
        }
        let image_logits = Tensor::from_vec(img, &[s, s, 2]);
        let loss = seg_loss(&point_logits, &image_logits, &f, s).unwrap();
        assert!(loss.item() < 1e-6, "loss {}", loss.item());
    }

    #[test]
    fn image_gradient_only_at_projected_pixels() {
        let cfg = PipelineConfig::toy();
        let f = toy_frustum(6, 4);
        let s = cfg.crop_size;
        let point_logits = Tensor::zeros(&[6, 2]);
        let image_logits = Tensor::zeros(&[s, s, 2]).with_grad();
        let loss = seg_loss(&point_logits, &image_logits, &f, s).unwrap();
        loss.backward().unwrap();
        let g = image_logits.grad().unwrap();
        let mut projected: std::collections::BTreeSet<usize> = Default::default();
        for uv in &f.projections {
            let x = (uv[0].round() as usize).min(s - 1);
            let y = (uv[1].round() as usize).min(s - 1);
            projected.insert(y * s + x);
        }
        for pix in 0..s * s {
            let gz = g[pix * 2].abs() + g[pix * 2 + 1].abs();
            if projected.contains(&pix) {
                assert!(gz > 0.0, "projected pixel {pix} has zero grad");
            } else {
                assert_eq!(gz, 0.0, "unprojected pixel {pix} has grad");
            }
        }
    }

    #[test]
    fn class_balancing_matches_hand_computation() {
        // 4 points: 1 fg, 3 bg; arbitrary logits; hand-compute the two
        // weighted means
        let mut f = toy_frustum(4, 5);
        f.fg_mask = Some(vec![true, false, false, false]);
        // separate the projections so each lands on a distinct pixel
        f.projections = vec![[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
        let rows = [[0.2f64, 0.9], [1.0, -0.3], [0.1, 0.4], [-0.7, 0.8]];
        let pl = Tensor::from_vec(rows.iter().flatten().copied().collect(), &[4, 2]);
        let s = 16usize;
        let img = Tensor::zeros(&[s, s, 2]);
        let loss = seg_loss(&pl, &img, &f, s).unwrap();

        let (w_fg, w_bg) = class_balance_weights(1, 3);
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, &fg) in rows.iter().zip(&[true, false, false, false]) {
            let lse = (r[0].exp() + r[1].exp()).ln();
            let nll = lse - if fg { r[1] } else { r[0] };
            let w = if fg { w_fg } else { w_bg };
            num += w * nll;
            den += w;
        }
        let point_term = num / den;
        let image_term = std::f64::consts::LN_2; // zeros logits, any weights
        assert!((loss.item() - (point_term + image_term)).abs() < 1e-12);
    }

    #[test]
    fn foreground_filter_thresholds_and_fallback() {
        let f = toy_frustum(4, 6);
        let all_fg = Tensor::from_vec(vec![-5.0, 5.0].repeat(4), &[4, 2]);
        assert_eq!(foreground_filter(&f, &all_fg, 0.5).len(), 4);

        let all_bg = Tensor::from_vec(
            vec![5.0, -5.0, 5.0, -4.0, 5.0, -6.0, 5.0, -5.5],
            &[4, 2],
        );
        let kept = foreground_filter(&f, &all_bg, 0.5);
        assert_eq!(kept.len(), 1);
        // highest fg prob is row 1 (smallest margin)
        assert_eq!(kept.points[0], f.points[1]);
    }
}
