//! Stage 3: encode the enriched RGB cloud with a point-set network, fuse
//! with the globally pooled image feature, decode the 7-parameter box, and
//! train with the distance-IoU loss.

use crate::autodiff::{
    concat, global_average_pool, mlp_forward, Activation, Linear, ParamBuilder, Tensor,
};
use crate::config::PipelineConfig;
use crate::geometry::{diou_loss, Box3D, BoxTensor, FrustumCloud};
use crate::gradcheck::CheckReport;
use crate::rng::Rng;
use crate::segmentation::centroid_of;

/// Fixed-size cloud fed to the regressor: measured foreground points plus
/// generated points, with RGB read at each point's source pixel.
#[derive(Debug, Clone, Default)]
pub struct EnrichedCloud {
    pub points: Vec<[f64; 3]>,
    pub rgb: Vec<[f64; 3]>,
    /// true = measured, false = generated.
    pub origin_mask: Vec<bool>,
    /// Crop-pixel position of every row.
    pub pixels: Vec<[f64; 2]>,
}

impl EnrichedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measured_count(&self) -> usize {
        self.origin_mask.iter().filter(|&&m| m).count()
    }

    pub fn generated_count(&self) -> usize {
        self.len() - self.measured_count()
    }
}

/// Nearest-pixel RGB from a [S, S, 3] float crop.
pub fn crop_rgb(crop: &[f64], crop_size: usize, u: f64, v: f64) -> [f64; 3] {
    let x = (u.round().max(0.0) as usize).min(crop_size - 1);
    let y = (v.round().max(0.0) as usize).min(crop_size - 1);
    let i = (y * crop_size + x) * 3;
    [crop[i], crop[i + 1], crop[i + 2]]
}

/// Concatenate the measured cloud with generated points; RGB for generated
/// rows is read from the crop at their sampled pixels.
pub fn enrich_cloud(
    measured: &FrustumCloud,
    decoded: &[[f64; 3]],
    target_pixels: &[[f64; 2]],
    crop: &[f64],
    crop_size: usize,
) -> EnrichedCloud {
    assert_eq!(decoded.len(), target_pixels.len());
    let mut out = EnrichedCloud {
        points: measured.points.clone(),
        rgb: measured.rgb.clone(),
        origin_mask: vec![true; measured.len()],
        pixels: measured.projections.clone(),
    };
    for (p, uv) in decoded.iter().zip(target_pixels) {
        out.points.push(*p);
        out.rgb.push(crop_rgb(crop, crop_size, uv[0], uv[1]));
        out.origin_mask.push(false);
        out.pixels.push(*uv);
    }
    out
}

/// Point-set encoder (shared MLP + max pool) and the box head h operating
/// on the concatenated cloud/image features.
pub struct BoxRegressor {
    enc: Vec<Linear>,
    head: Vec<Linear>,
    dim_priors: [f64; 3],
    coord_scale: f64,
    direct: bool,
}

impl BoxRegressor {
    pub fn new(b: &ParamBuilder, cfg: &PipelineConfig) -> Self {
        let mut enc = Vec::new();
        let mut dim = 6;
        for (i, &w) in cfg.box_enc_widths.iter().enumerate() {
            enc.push(Linear::new(b, &format!("box.enc{i}"), dim, w));
            dim = w;
        }
        let head_in = dim + cfg.image_feat_dim;
        let out_dim = if cfg.direct_box_regression { 7 } else { 8 };
        let head = vec![
            Linear::new(b, "box.head0", head_in, cfg.box_head_hidden),
            Linear::with_std(b, "box.head1", cfg.box_head_hidden, out_dim, 0.01),
        ];
        BoxRegressor {
            enc,
            head,
            dim_priors: cfg.dim_priors,
            coord_scale: cfg.coord_scale,
            direct: cfg.direct_box_regression,
        }
    }

    /// Cloud + pooled image context -> box parameters in the autodiff
    /// graph. `z` is the [c, hz, wz] feature map from the image branch.
    pub fn forward(&self, cloud: &EnrichedCloud, z: &Tensor) -> BoxTensor {
        assert!(!cloud.is_empty(), "regress_box needs a nonempty cloud");
        let centroid = centroid_of(&cloud.points);
        let n = cloud.len();
        let mut feats = Vec::with_capacity(n * 6);
        for (p, rgb) in cloud.points.iter().zip(&cloud.rgb) {
            feats.push((p[0] - centroid[0]) / self.coord_scale);
            feats.push((p[1] - centroid[1]) / self.coord_scale);
            feats.push((p[2] - centroid[2]) / self.coord_scale);
            feats.extend_from_slice(rgb);
        }
        let mut h = Tensor::from_vec(feats, &[n, 6]);
        for layer in &self.enc {
            h = layer.forward(&h).relu();
        }
        let f_pc = h.max_axis(0);
        let f_img = global_average_pool(z);
        let joint = concat(&[f_pc, f_img], 0).expect("feature concat");
        let raw = mlp_forward(
            &self.head,
            &joint.reshape(&[1, self.head[0].in_dim()]),
            Activation::Relu,
        )
        .reshape(&[self.head[1].out_dim()]);

        let centroid_t = |i: usize| Tensor::scalar(centroid[i]);
        if self.direct {
            // raw 7-vector mode: offsets in meters, dimensions raw, yaw raw
            BoxTensor {
                cx: &raw.pick(0) + &centroid_t(0),
                cy: &raw.pick(1) + &centroid_t(1),
                cz: &raw.pick(2) + &centroid_t(2),
                h: raw.pick(3),
                l: raw.pick(4),
                w: raw.pick(5),
                yaw: raw.pick(6),
            }
        } else {
            // centroid offset scaled to meters, log-dims over class priors,
            // yaw from a (sin, cos) pair
            let scale = self.coord_scale;
            BoxTensor {
                cx: &raw.pick(0).scale(scale) + &centroid_t(0),
                cy: &raw.pick(1).scale(scale) + &centroid_t(1),
                cz: &raw.pick(2).scale(scale) + &centroid_t(2),
                h: raw.pick(3).exp().scale(self.dim_priors[0]),
                l: raw.pick(4).exp().scale(self.dim_priors[1]),
                w: raw.pick(5).exp().scale(self.dim_priors[2]),
                yaw: crate::autodiff::atan2(&raw.pick(6), &raw.pick(7)),
            }
        }
    }
}

/// Predicted box as plain values (yaw normalized into (-pi, pi]).
pub fn regress_box(reg: &BoxRegressor, cloud: &EnrichedCloud, z: &Tensor) -> Box3D<f64> {
    crate::autodiff::no_grad(|| reg.forward(cloud, z)).to_box()
}

/// Stage-3 objective: distance-IoU against the ground-truth box.
pub fn box_loss(pred: &BoxTensor, gt: &Box3D<f64>) -> Tensor {
    diou_loss(pred, gt)
}

/// Finite-difference suite for the box-regression loss graph.
pub fn gradcheck_suite(seed: u64) -> Vec<CheckReport> {
    use crate::autodiff::ParamSet;
    use crate::gradcheck::check_param_grads;

    let cfg = PipelineConfig::toy();
    let mut rng = Rng::new(seed);
    let set = ParamSet::shared();
    let b = ParamBuilder::new(&set, seed);
    let reg = BoxRegressor::new(&b, &cfg);

    let mut cloud = EnrichedCloud::default();
    for i in 0..8 {
        cloud.points.push([
            12.0 + rng.range(-1.5, 1.5),
            rng.range(-1.5, 1.5),
            rng.range(0.0, 1.5),
        ]);
        cloud.rgb.push([rng.uniform(), rng.uniform(), rng.uniform()]);
        cloud.origin_mask.push(i < 5);
        cloud.pixels.push([rng.range(0.0, 15.0), rng.range(0.0, 15.0)]);
    }
    let zdim = cfg.image_feat_dim;
    let z = Tensor::from_vec(
        (0..zdim * 4).map(|_| rng.range(-0.5, 0.5)).collect(),
        &[zdim, 2, 2],
    );
    let gt = Box3D::new(12.2, 0.1, 0.7, 1.4, 3.8, 1.5, 0.4);

    let params: Vec<Tensor> = set.borrow().iter().map(|p| p.tensor.clone()).collect();
    let err = check_param_grads(&params, 1e-5, &|| box_loss(&reg.forward(&cloud, &z), &gt));
    vec![CheckReport {
        op: "box regression loss (L_iou)".into(),
        max_rel_err: err,
        tolerance: 1e-3,
    }]
}
