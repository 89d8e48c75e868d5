//! KITTI-format scene I/O: velodyne binaries, calibration text, label files,
//! and the conversions between label conventions and the internal box.
//!
//! Internally boxes use the geometric center in the LiDAR frame with z-up
//! yaw; KITTI labels use the camera-frame bottom-center and rotation_y.
//! Conversion happens only here, at the I/O boundary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::ppm;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box2D, Box3D, Calibration};
use crate::raster::Raster;

/// One raw label line (15 fields, optional 16th score).
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: [f64; 4],
    /// Dimensions in label order: height, width, length (meters).
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom-center location in rectified camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

/// A full frame: image, cloud, calibration, and per-object annotations.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub image: Raster,
    /// x, y, z, reflectance.
    pub cloud: Vec<[f64; 4]>,
    pub calib: Calibration,
    /// Raw labels for the objects of interest (car class), order-aligned
    /// with `boxes2d` / `gt_boxes3d`.
    pub labels: Vec<KittiLabel>,
    pub boxes2d: Vec<Box2D>,
    pub gt_boxes3d: Option<Vec<Box3D>>,
}

impl Scene {
    pub fn points_xyz(&self) -> Vec<[f64; 3]> {
        self.cloud.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }
}

fn format_err(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------- velodyne

/// Little-endian f32 quadruples. Length must be a multiple of 16 bytes and
/// every value finite.
pub fn parse_velodyne(bytes: &[u8], path: &Path) -> Result<Vec<[f64; 4]>> {
    if bytes.len() % 16 != 0 {
        let offset = (bytes.len() / 16 * 16) as u64;
        return Err(format_err(
            path,
            offset,
            format!("length {} is not a multiple of 16", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(bytes.len() / 16);
    for (i, chunk) in bytes.chunks_exact(16).enumerate() {
        let mut p = [0.0f64; 4];
        for (j, v) in p.iter_mut().enumerate() {
            let raw = f32::from_le_bytes(chunk[j * 4..j * 4 + 4].try_into().unwrap());
            if !raw.is_finite() {
                return Err(format_err(
                    path,
                    (i * 16 + j * 4) as u64,
                    format!("non-finite value in point {i}"),
                ));
            }
            *v = raw as f64;
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_velodyne(path: &Path) -> Result<Vec<[f64; 4]>> {
    let bytes = fs::read(path).map_err(Error::io_at(path))?;
    parse_velodyne(&bytes, path)
}

pub fn save_velodyne(path: &Path, cloud: &[[f64; 4]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for p in cloud {
        for v in p {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(Error::io_at(path))
}

// ------------------------------------------------------------------ calib

pub fn parse_calib(text: &str, path: &Path) -> Result<Calibration> {
    let mut values = std::collections::HashMap::new();
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let nums: std::result::Result<Vec<f64>, _> =
            rest.split_whitespace().map(|t| t.parse::<f64>()).collect();
        if let Ok(nums) = nums {
            values.insert(key.trim().to_string(), nums);
        }
    }
    let get = |key: &str, n: usize| -> Result<Vec<f64>> {
        let v = values.get(key).ok_or_else(|| Error::MissingCalibKey {
            path: path.to_path_buf(),
            key: key.to_string(),
        })?;
        if v.len() != n {
            return Err(format_err(
                path,
                0,
                format!("{key} has {} values, expected {n}", v.len()),
            ));
        }
        Ok(v.clone())
    };

    let p2 = get("P2", 12)?;
    let r0 = get("R0_rect", 9)?;
    let tr = get("Tr_velo_to_cam", 12)?;
    let calib = Calibration {
        p: [
            [p2[0], p2[1], p2[2], p2[3]],
            [p2[4], p2[5], p2[6], p2[7]],
            [p2[8], p2[9], p2[10], p2[11]],
        ],
        r_rect: [
            [r0[0], r0[1], r0[2]],
            [r0[3], r0[4], r0[5]],
            [r0[6], r0[7], r0[8]],
        ],
        t_lidar_to_cam: [
            [tr[0], tr[1], tr[2], tr[3]],
            [tr[4], tr[5], tr[6], tr[7]],
            [tr[8], tr[9], tr[10], tr[11]],
        ],
    };
    calib.validate()?;
    Ok(calib)
}

pub fn save_calib(path: &Path, calib: &Calibration) -> Result<()> {
    let row = |vals: &[f64]| -> String {
        vals.iter()
            .map(|v| format!("{v:.12e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut text = String::new();
    let p: Vec<f64> = calib.p.iter().flatten().copied().collect();
    let r: Vec<f64> = calib.r_rect.iter().flatten().copied().collect();
    let t: Vec<f64> = calib.t_lidar_to_cam.iter().flatten().copied().collect();
    let _ = writeln!(text, "P2: {}", row(&p));
    let _ = writeln!(text, "R0_rect: {}", row(&r));
    let _ = writeln!(text, "Tr_velo_to_cam: {}", row(&t));
    fs::write(path, text).map_err(Error::io_at(path))
}

// ------------------------------------------------------------------ labels

pub fn parse_label_line(line: &str, path: &Path, line_no: usize) -> Result<KittiLabel> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(format_err(
            path,
            line_no as u64,
            format!("label line {} has {} fields, expected 15 or 16", line_no + 1, fields.len()),
        ));
    }
    let num = |i: usize| -> Result<f64> {
        fields[i].parse::<f64>().map_err(|_| {
            format_err(
                path,
                line_no as u64,
                format!("bad number {:?} in field {i} of line {}", fields[i], line_no + 1),
            )
        })
    };
    Ok(KittiLabel {
        kind: fields[0].to_string(),
        truncated: num(1)?,
        occluded: num(2)? as i32,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        h: num(8)?,
        w: num(9)?,
        l: num(10)?,
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if fields.len() == 16 { Some(num(15)?) } else { None },
    })
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<KittiLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, path, i))
        .collect()
}

pub fn format_label_line(label: &KittiLabel) -> String {
    let mut s = format!(
        "{} {:.2} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        label.kind,
        label.truncated,
        label.occluded,
        label.alpha,
        label.bbox[0],
        label.bbox[1],
        label.bbox[2],
        label.bbox[3],
        label.h,
        label.w,
        label.l,
        label.location[0],
        label.location[1],
        label.location[2],
        label.rotation_y,
    );
    if let Some(score) = label.score {
        let _ = write!(s, " {score:.6}");
    }
    s
}

// ------------------------------------------------- convention conversions

/// KITTI camera-frame label -> internal LiDAR-frame box (geometric center,
/// z-up yaw).
pub fn label_to_box3d(label: &KittiLabel, calib: &Calibration) -> Box3D<f64> {
    let bottom = calib.cam_to_lidar(label.location);
    Box3D::new(
        bottom[0],
        bottom[1],
        bottom[2] + label.h / 2.0,
        label.h,
        label.l,
        label.w,
        normalize_angle(-label.rotation_y - std::f64::consts::FRAC_PI_2),
    )
}

/// Internal box -> camera-frame bottom-center location and rotation_y.
pub fn box3d_to_cam(b: &Box3D<f64>, calib: &Calibration) -> ([f64; 3], f64) {
    let bottom = [b.cx, b.cy, b.cz - b.h / 2.0];
    let location = calib.lidar_to_cam(bottom);
    let ry = normalize_angle(-b.yaw - std::f64::consts::FRAC_PI_2);
    (location, ry)
}

/// Metadata preserved through a load/save round trip. Pseudo labels leave
/// it unset and get recomputed alpha / zeroed flags.
#[derive(Debug, Clone, Default)]
pub struct LabelMeta {
    pub kind: Option<String>,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: Option<f64>,
}

/// One box ready to be written as a KITTI label line.
#[derive(Debug, Clone)]
pub struct LabeledBox {
    pub box3d: Box3D<f64>,
    pub box2d: Box2D,
    pub score: Option<f64>,
    pub meta: Option<LabelMeta>,
}

pub fn labeled_box_to_label(b: &LabeledBox, calib: &Calibration) -> KittiLabel {
    let (location, ry) = box3d_to_cam(&b.box3d, calib);
    let meta = b.meta.clone().unwrap_or_default();
    let alpha = meta
        .alpha
        .unwrap_or_else(|| normalize_angle(ry - location[0].atan2(location[2])));
    KittiLabel {
        kind: meta.kind.unwrap_or_else(|| "Car".into()),
        truncated: meta.truncated,
        occluded: meta.occluded,
        alpha,
        bbox: [b.box2d.xmin, b.box2d.ymin, b.box2d.xmax, b.box2d.ymax],
        h: b.box3d.h,
        w: b.box3d.w,
        l: b.box3d.l,
        location,
        rotation_y: ry,
        score: b.score,
    }
}

/// Write KITTI label lines (internal convention converted back at this
/// boundary). Atomic via temp + rename.
pub fn save_kitti_label(boxes: &[LabeledBox], calib: &Calibration, path: &Path) -> Result<()> {
    let mut text = String::new();
    for b in boxes {
        let _ = writeln!(text, "{}", format_label_line(&labeled_box_to_label(b, calib)));
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(Error::io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io_at(path))
}

// ------------------------------------------------------------- scene load

/// KITTI directory layout: image_2/*.png (or *.ppm), velodyne/*.bin,
/// calib/*.txt, label_2/*.txt.
pub fn load_kitti_scene(root: &Path, id: &str) -> Result<Scene> {
    let calib_path = root.join("calib").join(format!("{id}.txt"));
    let calib_text = fs::read_to_string(&calib_path).map_err(Error::io_at(&calib_path))?;
    let calib = parse_calib(&calib_text, &calib_path)?;

    let cloud = load_velodyne(&root.join("velodyne").join(format!("{id}.bin")))?;

    let image = load_image(root, id)?;

    let label_path = root.join("label_2").join(format!("{id}.txt"));
    let labels = if label_path.exists() {
        let text = fs::read_to_string(&label_path).map_err(Error::io_at(&label_path))?;
        parse_labels(&text, &label_path)?
    } else {
        Vec::new()
    };

    // car class only; other classes (and DontCare) are ignored
    let cars: Vec<KittiLabel> = labels.into_iter().filter(|l| l.kind == "Car").collect();
    let boxes2d: Vec<Box2D> = cars
        .iter()
        .filter_map(|l| {
            Box2D::new(l.bbox[0], l.bbox[1], l.bbox[2], l.bbox[3])
                .clamped(image.width, image.height)
        })
        .collect();
    // a clamped-away box would desync the lists; keep only labels with a
    // surviving 2D box
    let mut kept = Vec::new();
    let mut kept_boxes = Vec::new();
    for l in cars {
        if let Some(b) =
            Box2D::new(l.bbox[0], l.bbox[1], l.bbox[2], l.bbox[3]).clamped(image.width, image.height)
        {
            kept.push(l);
            kept_boxes.push(b);
        }
    }
    debug_assert_eq!(kept_boxes.len(), boxes2d.len());

    let has_3d = !kept.is_empty() && kept.iter().all(|l| l.h > 0.0 && l.l > 0.0 && l.w > 0.0);
    let gt_boxes3d =
        has_3d.then(|| kept.iter().map(|l| label_to_box3d(l, &calib)).collect::<Vec<_>>());

    Ok(Scene {
        id: id.to_string(),
        image,
        cloud,
        calib,
        labels: kept,
        boxes2d: kept_boxes,
        gt_boxes3d,
    })
}

fn load_image(root: &Path, id: &str) -> Result<Raster> {
    let ppm_path = root.join("image_2").join(format!("{id}.ppm"));
    if ppm_path.exists() {
        return ppm::read(&ppm_path);
    }
    let png_path = root.join("image_2").join(format!("{id}.png"));
    if png_path.exists() {
        let img = image::open(&png_path)
            .map_err(|e| format_err(&png_path, 0, format!("png decode: {e}")))?
            .to_rgb8();
        return Ok(Raster {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.into_raw(),
        });
    }
    Err(Error::IoAt {
        path: root.join("image_2").join(format!("{id}.(png|ppm)")),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
    })
}

/// Persist a scene in the KITTI layout (PPM image).
pub fn save_scene(root: &Path, scene: &Scene) -> Result<()> {
    for sub in ["image_2", "velodyne", "calib", "label_2"] {
        fs::create_dir_all(root.join(sub)).map_err(Error::io_at(root.join(sub)))?;
    }
    ppm::write(
        &root.join("image_2").join(format!("{}.ppm", scene.id)),
        &scene.image,
    )?;
    save_velodyne(
        &root.join("velodyne").join(format!("{}.bin", scene.id)),
        &scene.cloud,
    )?;
    save_calib(&root.join("calib").join(format!("{}.txt", scene.id)), &scene.calib)?;
    let mut text = String::new();
    for l in &scene.labels {
        let _ = writeln!(text, "{}", format_label_line(l));
    }
    let label_path = root.join("label_2").join(format!("{}.txt", scene.id));
    fs::write(&label_path, text).map_err(Error::io_at(&label_path))?;
    Ok(())
}

/// Scene ids present in a dataset directory (sorted).
pub fn list_scene_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("velodyne");
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(Error::io_at(&dir))? {
        let entry = entry.map_err(Error::io_at(&dir))?;
        let path: PathBuf = entry.path();
        if path.extension().is_some_and(|e| e == "bin") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_calib() -> Calibration {
        // KITTI-style axes: cam x = -y_l, cam y = -z_l, cam z = x_l
        Calibration {
            p: [
                [200.0, 0.0, 192.0, 0.0],
                [0.0, 200.0, 80.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            r_rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t_lidar_to_cam: [
                [0.0, -1.0, 0.0, 0.02],
                [0.0, 0.0, -1.0, 1.45],
                [1.0, 0.0, 0.0, -0.1],
            ],
        }
    }

    #[test]
    fn velodyne_16_bytes_is_one_point() {
        let mut bytes = Vec::new();
        for v in [1.5f32, -2.0, 0.25, 0.875] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let pts = parse_velodyne(&bytes, Path::new("x.bin")).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0], [1.5, -2.0, 0.25, 0.875]);
    }

    #[test]
    fn velodyne_truncation_names_offset() {
        let bytes = vec![0u8; 35];
        let err = parse_velodyne(&bytes, Path::new("x.bin")).unwrap_err().to_string();
        assert!(err.contains("offset 32"), "{err}");
    }

    #[test]
    fn velodyne_nan_is_structured_error() {
        let mut bytes = Vec::new();
        for v in [f32::NAN, 0.0, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(parse_velodyne(&bytes, Path::new("x.bin")).is_err());
    }

    #[test]
    fn calib_missing_key_named() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n";
        let err = parse_calib(text, Path::new("c.txt")).unwrap_err().to_string();
        assert!(err.contains("Tr_velo_to_cam"), "{err}");
    }

    #[test]
    fn label_line_roundtrip_within_tolerance() {
        let line = "Car 0.0 0 -1.57 100 150 300 350 1.5 1.6 3.9 2.0 1.5 20.0 -1.57";
        let path = Path::new("l.txt");
        let label = parse_label_line(line, path, 0).unwrap();
        let calib = test_calib();

        // load -> internal -> save
        let b3 = label_to_box3d(&label, &calib);
        let lb = LabeledBox {
            box3d: b3,
            box2d: Box2D::new(label.bbox[0], label.bbox[1], label.bbox[2], label.bbox[3]),
            score: None,
            meta: Some(LabelMeta {
                kind: Some(label.kind.clone()),
                truncated: label.truncated,
                occluded: label.occluded,
                alpha: Some(label.alpha),
            }),
        };
        let out = labeled_box_to_label(&lb, &calib);
        assert_eq!(out.kind, label.kind);
        assert!((out.truncated - label.truncated).abs() < 1e-6);
        assert_eq!(out.occluded, label.occluded);
        assert!((out.alpha - label.alpha).abs() < 1e-6);
        for i in 0..4 {
            assert!((out.bbox[i] - label.bbox[i]).abs() < 1e-6);
        }
        assert!((out.h - label.h).abs() < 1e-6);
        assert!((out.w - label.w).abs() < 1e-6);
        assert!((out.l - label.l).abs() < 1e-6);
        for i in 0..3 {
            assert!((out.location[i] - label.location[i]).abs() < 1e-6, "loc[{i}]");
        }
        assert!((out.rotation_y - label.rotation_y).abs() < 1e-6);

        // serialize -> reparse is a fixpoint after the first round trip
        let serialized = format_label_line(&out);
        let reparsed = parse_label_line(&serialized, path, 0).unwrap();
        let again = format_label_line(&labeled_box_to_label(
            &LabeledBox {
                box3d: label_to_box3d(&reparsed, &calib),
                box2d: Box2D::new(
                    reparsed.bbox[0],
                    reparsed.bbox[1],
                    reparsed.bbox[2],
                    reparsed.bbox[3],
                ),
                score: None,
                meta: Some(LabelMeta {
                    kind: Some(reparsed.kind.clone()),
                    truncated: reparsed.truncated,
                    occluded: reparsed.occluded,
                    alpha: Some(reparsed.alpha),
                }),
            },
            &calib,
        ));
        assert_eq!(serialized, again);
    }

    #[test]
    fn emitted_yaw_is_normalized() {
        let calib = test_calib();
        let b = Box3D::new(10.0, 2.0, 0.75, 1.5, 3.9, 1.6, 3.0);
        let (_, ry) = box3d_to_cam(&b, &calib);
        assert!(ry > -std::f64::consts::PI && ry <= std::f64::consts::PI);
        // conversion is self-inverse
        let label = KittiLabel {
            kind: "Car".into(),
            truncated: 0.0,
            occluded: 0,
            alpha: 0.0,
            bbox: [0.0, 0.0, 1.0, 1.0],
            h: b.h,
            w: b.w,
            l: b.l,
            location: box3d_to_cam(&b, &calib).0,
            rotation_y: ry,
            score: None,
        };
        let back = label_to_box3d(&label, &calib);
        assert!((back.cx - b.cx).abs() < 1e-12);
        assert!((back.cy - b.cy).abs() < 1e-12);
        assert!((back.cz - b.cz).abs() < 1e-12);
        assert!((back.yaw - b.yaw).abs() < 1e-12);
    }

    #[test]
    fn empty_label_text_is_zero_objects() {
        assert!(parse_labels("", Path::new("l.txt")).unwrap().is_empty());
        assert!(parse_labels("\n\n", Path::new("l.txt")).unwrap().is_empty());
    }
}
