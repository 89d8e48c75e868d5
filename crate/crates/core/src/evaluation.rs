//! Pseudo-label quality metrics: mean IoU, recall at IoU 0.7, coordinate
//! recovery error, and average precision over difficulty bins.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::dataio::{
    assign_difficulty, label_to_box3d, load_kitti_scene, parse_labels, Difficulty, KittiLabel,
};
use crate::error::{Error, Result};
use crate::geometry::{bev_iou, iou3d, Box2D, Box3D};

/// Per-object comparison of one pseudo box against its ground-truth
/// counterpart (matching is 1:1 by construction: one pseudo box per gt 2D
/// box).
#[derive(Debug, Clone, Serialize)]
pub struct MatchResult {
    pub scene_id: String,
    pub object_index: usize,
    pub iou3d: f64,
    pub bev_iou: f64,
    pub difficulty: Difficulty,
    /// false when the autolabeler skipped this ground-truth object.
    pub matched: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalCounts {
    pub gt_objects: usize,
    pub pseudo_objects: usize,
    pub matched: usize,
}

/// Quality report; IoU-derived rates are in [0, 1] (multiply by 100 for
/// table form).
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub m_iou: f64,
    pub recall_07: f64,
    /// Mean Euclidean recovery error in meters (absent when no
    /// mask-and-recover evaluation ran).
    pub m_err: Option<f64>,
    pub ap_3d: BTreeMap<String, f64>,
    pub ap_bev: BTreeMap<String, f64>,
    pub counts: EvalCounts,
    pub config_fingerprint: String,
    pub per_object: Vec<MatchResult>,
}

/// One frame of labels.
pub type FrameLabels = (String, Vec<KittiLabel>);

/// Pair pseudo labels with ground truth by scene id and 2D box. Pseudo
/// boxes that match no ground-truth 2D box are orphans (an error); gt
/// objects without a pseudo box count as misses.
pub fn label_quality(
    pseudo: &[FrameLabels],
    gt: &[FrameLabels],
    to_box: &dyn Fn(&str, &KittiLabel) -> Box3D<f64>,
) -> Result<Vec<MatchResult>> {
    let pseudo_map: BTreeMap<&str, &Vec<KittiLabel>> =
        pseudo.iter().map(|(id, l)| (id.as_str(), l)).collect();
    let gt_map: BTreeMap<&str, &Vec<KittiLabel>> =
        gt.iter().map(|(id, l)| (id.as_str(), l)).collect();

    let mut orphans: Vec<String> = Vec::new();
    for id in pseudo_map.keys() {
        if !gt_map.contains_key(*id) {
            orphans.push(format!("pseudo frame {id} has no ground truth"));
        }
    }
    for id in gt_map.keys() {
        if !pseudo_map.contains_key(*id) {
            orphans.push(format!("ground-truth frame {id} has no pseudo labels"));
        }
    }
    if !orphans.is_empty() {
        return Err(Error::Alignment { orphans });
    }

    let mut results = Vec::new();
    for (id, gt_labels) in gt {
        let preds = pseudo_map[id.as_str()];
        let mut used = vec![false; preds.len()];
        for (gi, g) in gt_labels.iter().enumerate() {
            let gbox = Box2D::new(g.bbox[0], g.bbox[1], g.bbox[2], g.bbox[3]);
            // exact 2D-box correspondence (pseudo labels echo the weak box)
            let hit = preds.iter().enumerate().find(|(pi, p)| {
                !used[*pi]
                    && p.bbox
                        .iter()
                        .zip(&g.bbox)
                        .all(|(a, b)| (a - b).abs() < 1e-3)
            });
            let difficulty = assign_difficulty(gbox.height(), g.occluded, g.truncated);
            match hit {
                Some((pi, p)) => {
                    used[pi] = true;
                    let gt3 = to_box(id, g);
                    let pd3 = to_box(id, p);
                    results.push(MatchResult {
                        scene_id: id.clone(),
                        object_index: gi,
                        iou3d: iou3d(&pd3, &gt3),
                        bev_iou: bev_iou(&pd3, &gt3),
                        difficulty,
                        matched: true,
                    });
                }
                None => results.push(MatchResult {
                    scene_id: id.clone(),
                    object_index: gi,
                    iou3d: 0.0,
                    bev_iou: 0.0,
                    difficulty,
                    matched: false,
                }),
            }
        }
        let leftovers: Vec<String> = preds
            .iter()
            .enumerate()
            .filter(|(pi, _)| !used[*pi])
            .map(|(pi, _)| format!("pseudo object {pi} in frame {id} matches no gt 2D box"))
            .collect();
        if !leftovers.is_empty() {
            return Err(Error::Alignment { orphans: leftovers });
        }
    }
    Ok(results)
}

/// Summary statistics from per-object matches: mIoU over matched pairs,
/// recall at IoU3D >= 0.7 over all ground-truth objects.
pub fn summarize_matches(matches: &[MatchResult]) -> (f64, f64) {
    let matched: Vec<&MatchResult> = matches.iter().filter(|m| m.matched).collect();
    let m_iou = if matched.is_empty() {
        0.0
    } else {
        matched.iter().map(|m| m.iou3d).sum::<f64>() / matched.len() as f64
    };
    let recall = if matches.is_empty() {
        0.0
    } else {
        matches.iter().filter(|m| m.matched && m.iou3d >= 0.7).count() as f64
            / matches.len() as f64
    };
    (m_iou, recall)
}

/// Mean Euclidean distance between recovered and withheld points, meters.
/// Empty input reports as absent rather than zero.
pub fn recovery_error(pairs: &[([f64; 3], [f64; 3])]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let total: f64 = pairs
        .iter()
        .map(|(a, b)| {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .sum();
    Some(total / pairs.len() as f64)
}

/// A scored detection for AP computation.
#[derive(Debug, Clone)]
pub struct Detection {
    pub frame: String,
    pub box3d: Box3D<f64>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct GtObject {
    pub frame: String,
    pub box3d: Box3D<f64>,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    ThreeD,
    Bev,
}

/// Greedy score-ordered matching + interpolated average precision (0-100).
/// `n_points` = 40 is the modern convention; 11 is available for the older
/// protocol. For difficulty bin d, ground truths easier than or equal to d
/// count; harder or ignored ones neither score nor penalize.
pub fn average_precision(
    detections: &[Detection],
    gts: &[GtObject],
    iou_threshold: f64,
    mode: IouMode,
    difficulty: Difficulty,
    n_points: usize,
) -> f64 {
    let rank = |d: Difficulty| match d {
        Difficulty::Easy => 0,
        Difficulty::Moderate => 1,
        Difficulty::Hard => 2,
        Difficulty::Ignored => 3,
    };
    let max_rank = rank(difficulty);
    let overlap = |a: &Box3D<f64>, b: &Box3D<f64>| match mode {
        IouMode::ThreeD => iou3d(a, b),
        IouMode::Bev => bev_iou(a, b),
    };

    // group ground truth by frame; track matching per gt
    let mut gt_by_frame: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by_frame.entry(g.frame.as_str()).or_default().push(i);
    }
    let n_valid = gts.iter().filter(|g| rank(g.difficulty) <= max_rank).count();
    if n_valid == 0 {
        return 0.0;
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap()
            .then_with(|| detections[a].frame.cmp(&detections[b].frame))
    });

    let mut gt_used = vec![false; gts.len()];
    // (is true positive, counted at all) in score order
    let mut outcomes: Vec<(bool, bool)> = Vec::with_capacity(order.len());
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        if let Some(frame_gts) = gt_by_frame.get(det.frame.as_str()) {
            for &gi in frame_gts {
                if gt_used[gi] {
                    continue;
                }
                let o = overlap(&det.box3d, &gts[gi].box3d);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                gt_used[gi] = true;
                if rank(gts[gi].difficulty) <= max_rank {
                    outcomes.push((true, true));
                } else {
                    // matched a harder/ignored gt: drop from the curve
                    outcomes.push((false, false));
                }
            }
            None => outcomes.push((false, true)),
        }
    }

    // precision-recall staircase
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for (is_tp, counted) in outcomes {
        if !counted {
            continue;
        }
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((
            tp as f64 / n_valid as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    // interpolated AP: p(r) = max precision at recall >= r
    let mut ap = 0.0;
    for i in 1..=n_points {
        let r = i as f64 / n_points as f64;
        let p = curve
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += p;
    }
    100.0 * ap / n_points as f64
}

/// Evaluate pseudo-label files against a dataset's ground truth.
/// `pred_dir` holds `{id}.txt` label files; `gt_root` is a dataset
/// directory (calib/ + label_2/). mErr is not computable from labels alone
/// and reported absent.
pub fn evaluate_labels(
    pred_dir: &Path,
    gt_root: &Path,
    ids: &[String],
    fingerprint: u64,
) -> Result<EvalReport> {
    let mut pseudo: Vec<FrameLabels> = Vec::new();
    let mut gt: Vec<FrameLabels> = Vec::new();
    let mut calibs: BTreeMap<String, crate::geometry::Calibration> = BTreeMap::new();
    for id in ids {
        let scene = load_kitti_scene(gt_root, id)?;
        gt.push((id.clone(), scene.labels.clone()));
        calibs.insert(id.clone(), scene.calib.clone());
        let pred_path = pred_dir.join(format!("{id}.txt"));
        let text = std::fs::read_to_string(&pred_path).map_err(Error::io_at(&pred_path))?;
        let labels = parse_labels(&text, &pred_path)?
            .into_iter()
            .filter(|l| l.kind == "Car")
            .collect();
        pseudo.push((id.clone(), labels));
    }

    let to_box = |id: &str, l: &KittiLabel| label_to_box3d(l, &calibs[id]);
    let matches = label_quality(&pseudo, &gt, &to_box)?;
    Ok(report_from_matches(&pseudo, &gt, matches, None, fingerprint, &to_box))
}

/// Assemble the full report (including per-difficulty AP) from matches.
pub fn report_from_matches(
    pseudo: &[FrameLabels],
    gt: &[FrameLabels],
    matches: Vec<MatchResult>,
    m_err: Option<f64>,
    fingerprint: u64,
    to_box: &dyn Fn(&str, &KittiLabel) -> Box3D<f64>,
) -> EvalReport {
    let (m_iou, recall) = summarize_matches(&matches);

    let detections: Vec<Detection> = pseudo
        .iter()
        .flat_map(|(id, labels)| {
            labels.iter().map(move |l| Detection {
                frame: id.clone(),
                box3d: to_box(id, l),
                score: l.score.unwrap_or(1.0),
            })
        })
        .collect();
    let gt_objects: Vec<GtObject> = gt
        .iter()
        .flat_map(|(id, labels)| {
            labels.iter().map(move |l| GtObject {
                frame: id.clone(),
                box3d: to_box(id, l),
                difficulty: assign_difficulty(l.bbox[3] - l.bbox[1], l.occluded, l.truncated),
            })
        })
        .collect();

    let mut ap_3d = BTreeMap::new();
    let mut ap_bev = BTreeMap::new();
    for (name, d) in [
        ("easy", Difficulty::Easy),
        ("moderate", Difficulty::Moderate),
        ("hard", Difficulty::Hard),
    ] {
        ap_3d.insert(
            name.to_string(),
            average_precision(&detections, &gt_objects, 0.7, IouMode::ThreeD, d, 40),
        );
        ap_bev.insert(
            name.to_string(),
            average_precision(&detections, &gt_objects, 0.7, IouMode::Bev, d, 40),
        );
    }

    EvalReport {
        m_iou,
        recall_07: recall,
        m_err,
        ap_3d,
        ap_bev,
        counts: EvalCounts {
            gt_objects: gt.iter().map(|(_, l)| l.len()).sum(),
            pseudo_objects: pseudo.iter().map(|(_, l)| l.len()).sum(),
            matched: matches.iter().filter(|m| m.matched).count(),
        },
        config_fingerprint: format!("{fingerprint:016x}"),
        per_object: matches,
    }
}

/// Plain-text table in the style of the published metric columns.
pub fn format_report_table(rows: &[(String, Option<f64>, f64, f64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>10}", "variant", "mErr", "mIoU", "Recall 0.7");
    for (name, m_err, m_iou, recall) in rows {
        let err = m_err.map_or("-".to_string(), |e| format!("{e:.4}"));
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8.2} {:>10.2}",
            name,
            err,
            m_iou * 100.0,
            recall * 100.0
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk_label(bbox: [f64; 4], loc: [f64; 3], score: Option<f64>) -> KittiLabel {
        KittiLabel {
            kind: "Car".into(),
            truncated: 0.0,
            occluded: 0,
            alpha: 0.0,
            bbox,
            h: 1.5,
            w: 1.6,
            l: 3.9,
            location: loc,
            rotation_y: 0.3,
            score,
        }
    }

    fn ident_to_box(_: &str, l: &KittiLabel) -> Box3D<f64> {
        // camera frame == lidar frame for these fixtures
        Box3D::new(
            l.location[0],
            l.location[1],
            l.location[2] + l.h / 2.0,
            l.h,
            l.l,
            l.w,
            l.rotation_y,
        )
    }

    #[test]
    fn identical_labels_give_perfect_quality() {
        let frame = vec![
            mk_label([0.0, 0.0, 100.0, 60.0], [5.0, 1.0, 10.0], None),
            mk_label([120.0, 10.0, 200.0, 55.0], [8.0, -2.0, 14.0], None),
        ];
        let gt = vec![("000000".to_string(), frame.clone())];
        let pseudo = vec![("000000".to_string(), frame)];
        let matches = label_quality(&pseudo, &gt, &ident_to_box).unwrap();
        let (m_iou, recall) = summarize_matches(&matches);
        assert!((m_iou - 1.0).abs() < 1e-12);
        assert!((recall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn miou_and_recall_arithmetic() {
        // object A at IoU 0.8 (vertical shift), object B at IoU ~0.6
        let gt_a = mk_label([0.0, 0.0, 50.0, 50.0], [0.0, 0.0, 10.0], None);
        let gt_b = mk_label([60.0, 0.0, 120.0, 50.0], [6.0, 0.0, 20.0], None);
        // shift A up so z-overlap/union = 0.8: dz solves (1.5-dz)/(1.5+dz)=0.8
        let dz_a = 1.5 * (1.0 - 0.8) / (1.0 + 0.8);
        let mut pd_a = gt_a.clone();
        pd_a.location[2] += dz_a;
        let dz_b = 1.5 * (1.0 - 0.6) / (1.0 + 0.6);
        let mut pd_b = gt_b.clone();
        pd_b.location[2] += dz_b;

        let gt = vec![("f".to_string(), vec![gt_a, gt_b])];
        let pseudo = vec![("f".to_string(), vec![pd_a, pd_b])];
        let matches = label_quality(&pseudo, &gt, &ident_to_box).unwrap();
        let (m_iou, recall) = summarize_matches(&matches);
        assert!((m_iou - 0.7).abs() < 1e-9, "mIoU {m_iou}");
        assert!((recall - 0.5).abs() < 1e-12, "recall {recall}");
    }

    #[test]
    fn orphan_frames_are_alignment_errors() {
        let gt = vec![("a".to_string(), vec![])];
        let pseudo = vec![("b".to_string(), vec![])];
        let err = label_quality(&pseudo, &gt, &ident_to_box).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
    }

    #[test]
    fn recovery_error_cases() {
        assert_eq!(recovery_error(&[]), None);
        let perfect = vec![([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])];
        assert_eq!(recovery_error(&perfect), Some(0.0));
        let off = vec![([0.3, 0.4, 0.0], [0.0, 0.0, 0.0])];
        assert!((recovery_error(&off).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ap_perfect_single_detection() {
        let b = Box3D::new(5.0, 0.0, 0.7, 1.5, 3.9, 1.6, 0.2);
        let det = vec![Detection {
            frame: "f".into(),
            box3d: b.clone(),
            score: 0.9,
        }];
        let gts = vec![GtObject {
            frame: "f".into(),
            box3d: b,
            difficulty: Difficulty::Easy,
        }];
        let ap = average_precision(&det, &gts, 0.7, IouMode::ThreeD, Difficulty::Easy, 40);
        assert!((ap - 100.0).abs() < 1e-9);
    }

    #[test]
    fn ap_zero_without_detections() {
        let gts = vec![GtObject {
            frame: "f".into(),
            box3d: Box3D::new(5.0, 0.0, 0.7, 1.5, 3.9, 1.6, 0.0),
            difficulty: Difficulty::Easy,
        }];
        let ap = average_precision(&[], &gts, 0.7, IouMode::ThreeD, Difficulty::Easy, 40);
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn ap_matches_hand_enumerated_staircase() {
        // 2 gts; 3 detections with descending scores: hit, miss, hit.
        // outcomes in score order: TP (r=1/2, p=1), FP (r=1/2, p=1/2),
        // TP (r=1, p=2/3).
        // interpolated: p(r)=1 for r<=1/2, p(r)=2/3 for r>1/2.
        // with 40 recall points: 20 points at 1.0, 20 at 2/3
        // AP = 100 * (20*1 + 20*(2/3))/40 = 83.3333...
        let g1 = Box3D::new(5.0, 0.0, 0.7, 1.5, 3.9, 1.6, 0.0);
        let g2 = Box3D::new(15.0, 2.0, 0.7, 1.5, 3.9, 1.6, 0.0);
        let far = Box3D::new(30.0, -5.0, 0.7, 1.5, 3.9, 1.6, 0.0);
        let dets = vec![
            Detection { frame: "f".into(), box3d: g1.clone(), score: 0.9 },
            Detection { frame: "f".into(), box3d: far, score: 0.8 },
            Detection { frame: "f".into(), box3d: g2.clone(), score: 0.7 },
        ];
        let gts = vec![
            GtObject { frame: "f".into(), box3d: g1, difficulty: Difficulty::Easy },
            GtObject { frame: "f".into(), box3d: g2, difficulty: Difficulty::Easy },
        ];
        let ap = average_precision(&dets, &gts, 0.7, IouMode::ThreeD, Difficulty::Easy, 40);
        let expected = 100.0 * (20.0 * 1.0 + 20.0 * (2.0 / 3.0)) / 40.0;
        assert!((ap - expected).abs() < 1e-9, "ap {ap} vs {expected}");
    }

    #[test]
    fn ap_is_input_order_invariant() {
        let g1 = Box3D::new(5.0, 0.0, 0.7, 1.5, 3.9, 1.6, 0.0);
        let g2 = Box3D::new(15.0, 2.0, 0.7, 1.5, 3.9, 1.6, 0.0);
        let dets = vec![
            Detection { frame: "f".into(), box3d: g1.clone(), score: 0.6 },
            Detection { frame: "f".into(), box3d: g2.clone(), score: 0.9 },
        ];
        let mut reversed = dets.clone();
        reversed.reverse();
        let gts = vec![
            GtObject { frame: "f".into(), box3d: g1, difficulty: Difficulty::Easy },
            GtObject { frame: "f".into(), box3d: g2, difficulty: Difficulty::Easy },
        ];
        let a = average_precision(&dets, &gts, 0.7, IouMode::ThreeD, Difficulty::Easy, 40);
        let b = average_precision(&reversed, &gts, 0.7, IouMode::ThreeD, Difficulty::Easy, 40);
        assert_eq!(a, b);
    }

    #[test]
    fn table_formatting_includes_absent_merr() {
        let rows = vec![
            ("full".to_string(), Some(0.1325), 0.6764, 0.6270),
            ("no-generation".to_string(), None, 0.6572, 0.5789),
        ];
        let t = format_report_table(&rows);
        assert!(t.contains("full"));
        assert!(t.contains('-'));
        assert!(t.contains("67.64"));
        assert!(t.contains("57.89"));
    }
}
