//! Camera calibration and the LiDAR-to-pixel projection chain.

use crate::error::{Error, Result};

/// Projection chain mapping LiDAR coordinates to pixel coordinates:
/// uv = perspective(P * R_rect * (T_lidar_to_cam * [x; 1])).
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// 3x4 camera projection matrix.
    pub p: [[f64; 4]; 3],
    /// 3x3 rectification rotation.
    pub r_rect: [[f64; 3]; 3],
    /// 3x4 rigid transform, LiDAR frame to camera frame.
    pub t_lidar_to_cam: [[f64; 4]; 3],
}

impl Calibration {
    /// Simple pinhole with identity rectification and extrinsics.
    pub fn pinhole(f: f64, cx: f64, cy: f64) -> Self {
        Calibration {
            p: [[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]],
            r_rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t_lidar_to_cam: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
        }
    }

    /// R_rect must be orthonormal within 1e-6 and the projective row of P
    /// finite.
    pub fn validate(&self) -> Result<()> {
        let r = &self.r_rect;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "R_rect not orthonormal: row {i} . row {j} = {dot}"
                    )));
                }
            }
        }
        if self.p[2].iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("projective row of P is not finite".into()));
        }
        Ok(())
    }

    /// LiDAR point to rectified camera coordinates.
    pub fn lidar_to_cam(&self, p: [f64; 3]) -> [f64; 3] {
        let t = &self.t_lidar_to_cam;
        let cam = [
            t[0][0] * p[0] + t[0][1] * p[1] + t[0][2] * p[2] + t[0][3],
            t[1][0] * p[0] + t[1][1] * p[1] + t[1][2] * p[2] + t[1][3],
            t[2][0] * p[0] + t[2][1] * p[1] + t[2][2] * p[2] + t[2][3],
        ];
        let r = &self.r_rect;
        [
            r[0][0] * cam[0] + r[0][1] * cam[1] + r[0][2] * cam[2],
            r[1][0] * cam[0] + r[1][1] * cam[1] + r[1][2] * cam[2],
            r[2][0] * cam[0] + r[2][1] * cam[1] + r[2][2] * cam[2],
        ]
    }

    /// Rectified camera coordinates back to the LiDAR frame (rigid inverse).
    pub fn cam_to_lidar(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.r_rect;
        // transpose of the rectification rotation
        let cam = [
            r[0][0] * p[0] + r[1][0] * p[1] + r[2][0] * p[2],
            r[0][1] * p[0] + r[1][1] * p[1] + r[2][1] * p[2],
            r[0][2] * p[0] + r[1][2] * p[1] + r[2][2] * p[2],
        ];
        let t = &self.t_lidar_to_cam;
        let d = [cam[0] - t[0][3], cam[1] - t[1][3], cam[2] - t[2][3]];
        [
            t[0][0] * d[0] + t[1][0] * d[1] + t[2][0] * d[2],
            t[0][1] * d[0] + t[1][1] * d[1] + t[2][1] * d[2],
            t[0][2] * d[0] + t[1][2] * d[1] + t[2][2] * d[2],
        ]
    }

    /// Project one rectified-camera point to pixels; depth is the
    /// pre-division z.
    pub fn cam_to_pixel(&self, cam: [f64; 3]) -> ([f64; 2], f64) {
        let p = &self.p;
        let x = p[0][0] * cam[0] + p[0][1] * cam[1] + p[0][2] * cam[2] + p[0][3];
        let y = p[1][0] * cam[0] + p[1][1] * cam[1] + p[1][2] * cam[2] + p[1][3];
        let z = p[2][0] * cam[0] + p[2][1] * cam[1] + p[2][2] * cam[2] + p[2][3];
        if z <= 0.0 {
            ([0.0, 0.0], z)
        } else {
            ([x / z, y / z], z)
        }
    }
}

/// One projected point; `valid` is false when the pre-division depth is
/// non-positive. Invalid points carry (0, 0) pixels, never NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub uv: [f64; 2],
    pub depth: f64,
    pub valid: bool,
}

/// Project LiDAR points through the full calibration chain.
pub fn project_points(calib: &Calibration, pts: &[[f64; 3]]) -> Vec<Projected> {
    pts.iter()
        .map(|&p| {
            let cam = calib.lidar_to_cam(p);
            let (uv, depth) = calib.cam_to_pixel(cam);
            Projected {
                uv,
                depth,
                valid: depth > 0.0,
            }
        })
        .collect()
}
