//! Per-object preprocessing: crop + resize, frustum extraction, training
//! filters, difficulty assignment.

use serde::{Deserialize, Serialize};

use super::kitti::Scene;
use crate::geometry::{extract_frustum, points_in_box, Box2D, Box3D, FrustumCloud, RgbSampling};
use crate::rng::Rng;

/// KITTI-convention difficulty bins (min 2D box height 40/25/25 px, max
/// occlusion 0/1/2, max truncation 0.15/0.30/0.50).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

pub fn assign_difficulty(box_height_px: f64, occluded: i32, truncated: f64) -> Difficulty {
    if box_height_px >= 40.0 && occluded <= 0 && truncated <= 0.15 {
        Difficulty::Easy
    } else if box_height_px >= 25.0 && occluded <= 1 && truncated <= 0.30 {
        Difficulty::Moderate
    } else if box_height_px >= 25.0 && occluded <= 2 && truncated <= 0.50 {
        Difficulty::Hard
    } else {
        Difficulty::Ignored
    }
}

/// One 2D-box instance ready for the networks. Frustum projections are
/// re-expressed in crop pixel coordinates.
#[derive(Debug, Clone)]
pub struct ObjectSample {
    pub scene_id: String,
    pub object_index: usize,
    pub box2d: Box2D,
    /// [S, S, 3] floats in [0, 1].
    pub crop: Vec<f64>,
    pub crop_size: usize,
    pub frustum: FrustumCloud,
    pub gt_box3d: Option<Box3D<f64>>,
    pub difficulty: Difficulty,
}

/// Map image pixel coords into crop pixel coords: [0, S) x [0, S).
pub fn image_to_crop(uv: [f64; 2], b: &Box2D, crop_size: usize) -> [f64; 2] {
    let s = crop_size as f64;
    [
        (uv[0] - b.xmin) * s / b.width(),
        (uv[1] - b.ymin) * s / b.height(),
    ]
}

pub fn crop_to_image(uv: [f64; 2], b: &Box2D, crop_size: usize) -> [f64; 2] {
    let s = crop_size as f64;
    [
        b.xmin + uv[0] * b.width() / s,
        b.ymin + uv[1] * b.height() / s,
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub crop_size: usize,
    pub min_points: usize,
    pub min_fg: usize,
    /// Cap on frustum size (the paper-setting input cloud size n); larger
    /// frustums are randomly subsampled.
    pub max_points: usize,
    /// Training mode applies the (>= min_points, >= min_fg) filter and
    /// requires ground truth; autolabel mode only requires a nonempty
    /// frustum.
    pub training: bool,
    pub bilinear_rgb: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            crop_size: 112,
            min_points: 30,
            min_fg: 5,
            max_points: 1024,
            training: true,
            bilinear_rgb: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkipRecord {
    pub scene_id: String,
    pub object_index: usize,
    pub reason: String,
}

/// Build per-object samples for one scene. Filtered objects are reported
/// with reasons rather than dropped silently.
pub fn build_object_samples(
    scene: &Scene,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> (Vec<ObjectSample>, Vec<SkipRecord>) {
    let mut samples = Vec::new();
    let mut skips = Vec::new();
    let pts = scene.points_xyz();
    let sampling = if cfg.bilinear_rgb {
        RgbSampling::Bilinear
    } else {
        RgbSampling::Nearest
    };

    for (idx, box2d) in scene.boxes2d.iter().enumerate() {
        let mut skip = |reason: String| {
            skips.push(SkipRecord {
                scene_id: scene.id.clone(),
                object_index: idx,
                reason,
            });
        };

        let mut frustum = extract_frustum(&scene.calib, &pts, box2d, &scene.image, sampling);
        let gt = scene.gt_boxes3d.as_ref().map(|b| b[idx].clone());

        if cfg.training {
            let Some(gt_box) = &gt else {
                skip("no ground truth for training".into());
                continue;
            };
            frustum.fg_mask = Some(points_in_box(gt_box, &frustum.points));
            if frustum.len() < cfg.min_points {
                skip(format!(
                    "too few points ({} < {})",
                    frustum.len(),
                    cfg.min_points
                ));
                continue;
            }
            if frustum.fg_count() < cfg.min_fg {
                skip(format!(
                    "too few foreground points ({} < {})",
                    frustum.fg_count(),
                    cfg.min_fg
                ));
                continue;
            }
        } else {
            if frustum.is_empty() {
                skip("empty frustum".into());
                continue;
            }
            if let Some(gt_box) = &gt {
                frustum.fg_mask = Some(points_in_box(gt_box, &frustum.points));
            }
        }

        if frustum.len() > cfg.max_points {
            let mut keep = rng.sample_indices(frustum.len(), cfg.max_points);
            keep.sort_unstable();
            frustum = frustum.select(&keep);
        }

        // into crop coordinates
        frustum.projections = frustum
            .projections
            .iter()
            .map(|&uv| image_to_crop(uv, box2d, cfg.crop_size))
            .collect();

        let crop = scene
            .image
            .crop_resize(box2d.xmin, box2d.ymin, box2d.xmax, box2d.ymax, cfg.crop_size);

        let label = &scene.labels[idx];
        samples.push(ObjectSample {
            scene_id: scene.id.clone(),
            object_index: idx,
            box2d: *box2d,
            crop,
            crop_size: cfg.crop_size,
            frustum,
            gt_box3d: gt,
            difficulty: assign_difficulty(box2d.height(), label.occluded, label.truncated),
        });
    }
    (samples, skips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate_synthetic_scene, SynthConfig};

    fn scene() -> Scene {
        let cfg = SynthConfig {
            image_width: 128,
            image_height: 64,
            focal: 70.0,
            azimuth_steps: 300,
            elevation_steps: 32,
            cars_min: 2,
            cars_max: 4,
            ..Default::default()
        };
        generate_synthetic_scene(&mut Rng::new(11), &cfg).unwrap().scene
    }

    #[test]
    fn filters_apply_in_training_mode() {
        let scene = scene();
        let cfg = SampleConfig {
            crop_size: 32,
            ..Default::default()
        };
        let (samples, skips) = build_object_samples(&scene, &cfg, &mut Rng::new(0));
        assert_eq!(samples.len() + skips.len(), scene.boxes2d.len());
        for s in &samples {
            assert!(s.frustum.len() >= cfg.min_points);
            assert!(s.frustum.fg_count() >= cfg.min_fg);
        }
        for skip in &skips {
            assert!(skip.reason.contains("points"), "{}", skip.reason);
        }
    }

    #[test]
    fn threshold_boundary_29_filtered_30_kept() {
        // direct filter-contract check on counts
        let scene = scene();
        let big = SampleConfig {
            crop_size: 32,
            min_points: usize::MAX,
            ..Default::default()
        };
        let (samples, skips) = build_object_samples(&scene, &big, &mut Rng::new(0));
        assert!(samples.is_empty());
        assert_eq!(skips.len(), scene.boxes2d.len());

        let lax = SampleConfig {
            crop_size: 32,
            min_points: 1,
            min_fg: 1,
            ..Default::default()
        };
        let (samples2, _) = build_object_samples(&scene, &lax, &mut Rng::new(0));
        assert!(!samples2.is_empty());
    }

    #[test]
    fn projections_inside_crop_and_invertible() {
        let scene = scene();
        let cfg = SampleConfig {
            crop_size: 48,
            ..Default::default()
        };
        let (samples, _) = build_object_samples(&scene, &cfg, &mut Rng::new(0));
        assert!(!samples.is_empty(), "need at least one kept sample");
        for s in &samples {
            for (uv_crop, p) in s.frustum.projections.iter().zip(&s.frustum.points) {
                assert!(uv_crop[0] >= 0.0 && uv_crop[0] < 48.0, "{uv_crop:?}");
                assert!(uv_crop[1] >= 0.0 && uv_crop[1] < 48.0, "{uv_crop:?}");
                // round trip to image coords recovers the raw projection
                let img_uv = crop_to_image(*uv_crop, &s.box2d, 48);
                let reproj = crate::geometry::project_points(&scene.calib, &[*p])[0];
                assert!((img_uv[0] - reproj.uv[0]).abs() < 1e-9);
                assert!((img_uv[1] - reproj.uv[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn subsampling_caps_point_count() {
        let scene = scene();
        let cfg = SampleConfig {
            crop_size: 32,
            max_points: 40,
            ..Default::default()
        };
        let (samples, _) = build_object_samples(&scene, &cfg, &mut Rng::new(5));
        for s in &samples {
            assert!(s.frustum.len() <= 40);
            if let Some(m) = &s.frustum.fg_mask {
                assert_eq!(m.len(), s.frustum.len());
            }
        }
    }

    #[test]
    fn difficulty_bins() {
        assert_eq!(assign_difficulty(50.0, 0, 0.0), Difficulty::Easy);
        assert_eq!(assign_difficulty(50.0, 1, 0.0), Difficulty::Moderate);
        assert_eq!(assign_difficulty(30.0, 2, 0.45), Difficulty::Hard);
        assert_eq!(assign_difficulty(10.0, 0, 0.0), Difficulty::Ignored);
        assert_eq!(assign_difficulty(30.0, 3, 0.0), Difficulty::Ignored);
    }
}
