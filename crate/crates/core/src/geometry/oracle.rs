//! Monte-Carlo volume-sampling reference for box overlap.
//!
//! Estimates IoU by sampling the axis-aligned bounding box of the pair and
//! counting membership. Algorithmically independent of the polygon-clipping
//! implementation; the verification suites compare the two.

use super::boxes::Box3D;
use super::iou::points_in_box;
use crate::rng::Rng;

/// Monte-Carlo IoU of either the 3D volumes or the BEV footprints.
pub fn mc_iou(a: &Box3D<f64>, b: &Box3D<f64>, samples: usize, bev: bool, rng: &mut Rng) -> f64 {
    // axis-aligned bounds of the union
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for bx in [a, b] {
        for c in bx.corners() {
            for d in 0..3 {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
    }
    if bev {
        // collapse z so membership reduces to the footprint test
        lo[2] = 0.0;
        hi[2] = 1.0;
    }

    let flat = |bx: &Box3D<f64>| {
        if bev {
            Box3D::new(bx.cx, bx.cy, 0.5, 1.0, bx.l, bx.w, bx.yaw)
        } else {
            bx.clone()
        }
    };
    let (fa, fb) = (flat(a), flat(b));

    let mut inter = 0usize;
    let mut union = 0usize;
    let mut pt = [[0.0f64; 3]; 1];
    for _ in 0..samples {
        pt[0] = [
            rng.range(lo[0], hi[0]),
            rng.range(lo[1], hi[1]),
            rng.range(lo[2], hi[2]),
        ];
        let in_a = points_in_box(&fa, &pt)[0];
        let in_b = points_in_box(&fb, &pt)[0];
        if in_a && in_b {
            inter += 1;
        }
        if in_a || in_b {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou::{bev_iou, iou3d};

    #[test]
    fn mc_matches_exact_on_known_cases() {
        let mut rng = Rng::new(5);
        let a = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = Box3D::new(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let est = mc_iou(&a, &b, 200_000, true, &mut rng);
        assert!((est - bev_iou(&a, &b)).abs() < 3e-3, "{est}");

        let c = Box3D::new(0.2, -0.1, 0.3, 1.4, 2.0, 1.2, 0.8);
        let d = Box3D::new(0.5, 0.4, 0.1, 1.1, 2.4, 1.0, -0.4);
        let est3 = mc_iou(&c, &d, 400_000, false, &mut rng);
        assert!((est3 - iou3d(&c, &d)).abs() < 3e-3, "{est3} vs {}", iou3d(&c, &d));
    }
}
