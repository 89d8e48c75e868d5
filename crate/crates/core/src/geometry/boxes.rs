//! Oriented 3D boxes and axis-aligned 2D boxes.

use crate::scalar::Scalar;

/// Normalize an angle into (-pi, pi].
pub fn normalize_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::pi() + T::pi();
    let mut x = a % two_pi;
    if x > T::pi() {
        x = x - two_pi;
    } else if x <= -T::pi() {
        x = x + two_pi;
    }
    x
}

/// 7-parameter oriented box: geometric center in the LiDAR/world frame
/// (z up), dimensions, and yaw about the up axis in (-pi, pi]. Length runs
/// along the heading, width across it, height along z.
#[derive(Debug, Clone, PartialEq)]
pub struct Box3D<T: Scalar = f64> {
    pub cx: T,
    pub cy: T,
    pub cz: T,
    pub h: T,
    pub l: T,
    pub w: T,
    pub yaw: T,
}

impl<T: Scalar> Box3D<T> {
    pub fn new(cx: T, cy: T, cz: T, h: T, l: T, w: T, yaw: T) -> Self {
        debug_assert!(h > T::ZERO && l > T::ZERO && w > T::ZERO);
        Box3D {
            cx,
            cy,
            cz,
            h,
            l,
            w,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn as_params(&self) -> [T; 7] {
        [self.cx, self.cy, self.cz, self.h, self.l, self.w, self.yaw]
    }

    pub fn from_params(p: [T; 7]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    pub fn volume(&self) -> T {
        self.h * self.l * self.w
    }

    pub fn z_bottom(&self) -> T {
        self.cz - self.h / T::from_f64(2.0)
    }

    pub fn z_top(&self) -> T {
        self.cz + self.h / T::from_f64(2.0)
    }

    /// Footprint corners in the ground plane, CCW seen from above:
    /// front-left, back-left, back-right, front-right.
    pub fn bev_corners(&self) -> [[T; 2]; 4] {
        let (s, c) = (self.yaw.sin(), self.yaw.cos());
        let hl = self.l / T::from_f64(2.0);
        let hw = self.w / T::from_f64(2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| [self.cx + lx * c - ly * s, self.cy + lx * s + ly * c])
    }

    /// 8 corners: bottom face CCW seen from above, then the top face in the
    /// same order.
    pub fn corners(&self) -> [[T; 3]; 8] {
        let bev = self.bev_corners();
        let (zb, zt) = (self.z_bottom(), self.z_top());
        let mut out = [[T::ZERO; 3]; 8];
        for (i, [x, y]) in bev.iter().enumerate() {
            out[i] = [*x, *y, zb];
            out[i + 4] = [*x, *y, zt];
        }
        out
    }
}

/// Axis-aligned 2D pixel box (xmin < xmax, ymin < ymax).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Box2D {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        debug_assert!(xmin < xmax && ymin < ymax, "degenerate 2D box");
        Box2D {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Half-open pixel-space membership test.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.xmin && u < self.xmax && v >= self.ymin && v < self.ymax
    }

    /// Clamp to image bounds; returns None if nothing remains.
    pub fn clamped(&self, width: usize, height: usize) -> Option<Box2D> {
        let xmin = self.xmin.max(0.0);
        let ymin = self.ymin.max(0.0);
        let xmax = self.xmax.min(width as f64);
        let ymax = self.ymax.min(height as f64);
        (xmin < xmax && ymin < ymax).then_some(Box2D {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    /// Plain axis-aligned IoU (used by 2D matching in evaluation).
    pub fn iou(&self, other: &Box2D) -> f64 {
        let ix = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let iy = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        let inter = ix * iy;
        let union = self.width() * self.height() + other.width() * other.height() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_of_axis_aligned_box() {
        let b: Box3D = Box3D::new(0.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0);
        let c = b.corners();
        for p in &c {
            assert!((p[0].abs() - 1.0).abs() < 1e-12);
            assert!((p[1].abs() - 0.5).abs() < 1e-12);
            assert!((p[2].abs() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn yaw_quarter_turn_swaps_extents() {
        let b: Box3D = Box3D::new(0.0, 0.0, 0.0, 1.0, 2.0, 1.0, std::f64::consts::FRAC_PI_2);
        let c = b.bev_corners();
        let max_x = c.iter().map(|p| p[0].abs()).fold(0.0, f64::max);
        let max_y = c.iter().map(|p| p[1].abs()).fold(0.0, f64::max);
        assert!((max_x - 0.5).abs() < 1e-12);
        assert!((max_y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corners_rotate_with_yaw() {
        let theta = 0.7;
        let b0: Box3D = Box3D::new(0.0, 0.0, 0.0, 1.0, 3.0, 1.5, 0.0);
        let bt: Box3D = Box3D::new(0.0, 0.0, 0.0, 1.0, 3.0, 1.5, theta);
        let (s, c) = (theta.sin(), theta.cos());
        for (p0, pt) in b0.corners().iter().zip(bt.corners().iter()) {
            let rx = p0[0] * c - p0[1] * s;
            let ry = p0[0] * s + p0[1] * c;
            assert!((rx - pt[0]).abs() < 1e-12);
            assert!((ry - pt[1]).abs() < 1e-12);
            assert!((p0[2] - pt[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_normalization_range() {
        for k in -8i32..=8 {
            let a = 0.3 + k as f64 * std::f64::consts::PI;
            let n = normalize_angle(a);
            assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI, "{n}");
            // same direction modulo 2 pi
            assert!(((a - n) / (2.0 * std::f64::consts::PI)).fract().abs() < 1e-9);
        }
        assert_eq!(normalize_angle(std::f64::consts::PI), std::f64::consts::PI);
    }
}
