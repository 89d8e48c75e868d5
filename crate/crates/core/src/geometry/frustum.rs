//! Frustum sub-cloud extraction from a 2D box.

use super::boxes::Box2D;
use super::calib::{project_points, Calibration};
use crate::raster::Raster;

/// How RGB is read for projected points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgbSampling {
    Nearest,
    Bilinear,
}

/// Points whose projections fall inside one 2D box, with their pixel
/// positions and colors. All arrays share the same length.
#[derive(Debug, Clone, Default)]
pub struct FrustumCloud {
    pub points: Vec<[f64; 3]>,
    pub projections: Vec<[f64; 2]>,
    pub rgb: Vec<[f64; 3]>,
    pub fg_mask: Option<Vec<bool>>,
}

impl FrustumCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keep only the rows named by `keep` (in that order).
    pub fn select(&self, keep: &[usize]) -> FrustumCloud {
        FrustumCloud {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            projections: keep.iter().map(|&i| self.projections[i]).collect(),
            rgb: keep.iter().map(|&i| self.rgb[i]).collect(),
            fg_mask: self
                .fg_mask
                .as_ref()
                .map(|m| keep.iter().map(|&i| m[i]).collect()),
        }
    }

    pub fn fg_count(&self) -> usize {
        self.fg_mask
            .as_ref()
            .map(|m| m.iter().filter(|&&b| b).count())
            .unwrap_or(0)
    }
}

/// Keep points with positive depth whose projections fall inside `bbox`
/// (half-open pixel bounds), sampling RGB at each projection.
pub fn extract_frustum(
    calib: &Calibration,
    cloud: &[[f64; 3]],
    bbox: &Box2D,
    image: &Raster,
    sampling: RgbSampling,
) -> FrustumCloud {
    let projected = project_points(calib, cloud);
    let mut out = FrustumCloud::default();
    for (p, proj) in cloud.iter().zip(&projected) {
        if !proj.valid || !bbox.contains(proj.uv[0], proj.uv[1]) {
            continue;
        }
        out.points.push(*p);
        out.projections.push(proj.uv);
        out.rgb.push(match sampling {
            RgbSampling::Nearest => image.sample_nearest(proj.uv[0], proj.uv[1]),
            RgbSampling::Bilinear => image.sample_bilinear(proj.uv[0], proj.uv[1]),
        });
    }
    out
}
