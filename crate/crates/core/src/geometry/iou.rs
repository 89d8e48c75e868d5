//! Rotated-box overlap: exact BEV IoU via polygon clipping, 3D IoU via the
//! factored BEV-area x vertical-overlap construction, point membership.

use super::boxes::Box3D;
use super::polygon::{clip_convex, polygon_area};
use crate::scalar::Scalar;

/// Exact intersection area of two rotated footprints.
pub fn bev_intersection_area<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let clipped = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&clipped).max(T::ZERO)
}

/// IoU of the two rotated footprint rectangles.
pub fn bev_iou<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let area_a = a.l * a.w;
    let area_b = b.l * b.w;
    if area_a <= T::ZERO || area_b <= T::ZERO {
        return T::ZERO;
    }
    let inter = bev_intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= T::ZERO {
        T::ZERO
    } else {
        inter / union
    }
}

/// BEV intersection area x vertical overlap, over the union of volumes.
pub fn iou3d<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    if a.volume() <= T::ZERO || b.volume() <= T::ZERO {
        return T::ZERO;
    }
    let inter_area = bev_intersection_area(a, b);
    let z_overlap = (a.z_top().min(b.z_top()) - a.z_bottom().max(b.z_bottom())).max(T::ZERO);
    let inter_vol = inter_area * z_overlap;
    let union = a.volume() + b.volume() - inter_vol;
    if union <= T::ZERO {
        T::ZERO
    } else {
        inter_vol / union
    }
}

/// Membership after inverse-yaw rotation into the box frame, boundaries
/// inclusive.
pub fn points_in_box<T: Scalar>(b: &Box3D<T>, pts: &[[T; 3]]) -> Vec<bool> {
    let (s, c) = (b.yaw.sin(), b.yaw.cos());
    let half = T::from_f64(0.5);
    let (hl, hw, hh) = (b.l * half, b.w * half, b.h * half);
    pts.iter()
        .map(|p| {
            let dx = p[0] - b.cx;
            let dy = p[1] - b.cy;
            let dz = p[2] - b.cz;
            // rotate by -yaw
            let lx = dx * c + dy * s;
            let ly = -dx * s + dy * c;
            lx.abs() <= hl && ly.abs() <= hw && dz.abs() <= hh
        })
        .collect()
}
