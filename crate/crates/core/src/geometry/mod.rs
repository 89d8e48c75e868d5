//! Calibration, projection, frustum extraction, oriented-box math, rotated
//! IoU and the box-regression loss.

mod boxes;
mod calib;
mod diou;
mod frustum;
mod iou;
pub mod oracle;
mod polygon;

pub use boxes::{normalize_angle, Box2D, Box3D};
pub use calib::{project_points, Calibration, Projected};
pub use diou::{diou_loss, BoxTensor};
pub use frustum::{extract_frustum, FrustumCloud, RgbSampling};
pub use iou::{bev_intersection_area, bev_iou, iou3d, points_in_box};
pub use polygon::{clip_convex, polygon_area};

use crate::gradcheck::CheckReport;
use crate::rng::Rng;

/// Sample a random valid box near the origin region.
pub(crate) fn random_box(rng: &mut Rng) -> Box3D<f64> {
    Box3D {
        cx: rng.range(-2.0, 2.0),
        cy: rng.range(-2.0, 2.0),
        cz: rng.range(-1.0, 1.0),
        h: rng.range(0.8, 2.2),
        l: rng.range(1.5, 4.5),
        w: rng.range(0.8, 2.2),
        yaw: rng.range(-std::f64::consts::PI, std::f64::consts::PI),
    }
}

/// Pair of overlapping boxes kept away from clipping degeneracies, so the
/// dIoU gradient is well-defined at the sample point.
pub(crate) fn random_nondegenerate_pair(rng: &mut Rng) -> (Box3D<f64>, Box3D<f64>) {
    loop {
        let a = random_box(rng);
        let mut b = random_box(rng);
        // pull b toward a so the footprints usually overlap
        b.cx = a.cx + rng.range(-1.5, 1.5);
        b.cy = a.cy + rng.range(-1.5, 1.5);
        b.cz = a.cz + rng.range(-0.5, 0.5);
        if iou3d(&a, &b) < 1e-3 {
            continue;
        }
        if diou::clipping_degeneracy_margin(&a, &b) < 1e-3 {
            continue;
        }
        let (bot_a, top_a) = (a.cz - a.h / 2.0, a.cz + a.h / 2.0);
        let (bot_b, top_b) = (b.cz - b.h / 2.0, b.cz + b.h / 2.0);
        let z_overlap = top_a.min(top_b) - bot_a.max(bot_b);
        if z_overlap.abs() < 1e-3 {
            continue;
        }
        return (a, b);
    }
}

/// Finite-difference suite for the differentiable geometry path.
pub fn gradcheck_suite(seed: u64) -> Vec<CheckReport> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let (pred, gt) = random_nondegenerate_pair(&mut rng);
        let vals = vec![(
            vec![pred.cx, pred.cy, pred.cz, pred.h, pred.l, pred.w, pred.yaw],
            vec![7],
        )];
        let gt_c = gt.clone();
        let err = crate::gradcheck::check_scalar_fn(&vals, 1e-6, &move |ts| {
            let bt = BoxTensor::from_params_tensor(&ts[0]);
            diou_loss(&bt, &gt_c)
        });
        worst = worst.max(err);
    }
    vec![CheckReport {
        op: "diou_loss".into(),
        max_rel_err: worst,
        tolerance: 1e-3,
    }]
}
