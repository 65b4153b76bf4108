//! KITTI-style detection scoring: greedy matching, precision/recall,
//! 11-point interpolated AP per (IoU threshold, difficulty tier) and the
//! regression hit rate.

use crate::geometry::{
    bev_axis_aligned_normalized, bev_footprint, denormalize_targets, iou_axis_aligned, iou_rotated,
    wrap_angle, BevPoint, BevQuad, BevRect, Box2D, Z_RANGE,
};
use crate::kitti::{Difficulty, LabelRecord};
use crate::model::Prediction;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction frame `{0}` has no ground-truth frame")]
    FrameMismatch(String),
    #[error("{dets} predictions for {gts} ground-truth boxes")]
    LengthMismatch { dets: usize, gts: usize },
    #[error("unknown matching geometry `{0}` (expected bev, bev-rotated or frontal)")]
    UnknownGeometry(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub const IOU_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.9];

/// Box representation used for matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetBox {
    /// Normalized axis-aligned BEV rectangle.
    Rect(BevRect),
    /// Rotated BEV footprint in meters.
    Quad(BevQuad),
    /// Frontal image box in pixels.
    Frontal(Box2D),
}

pub fn box_iou(a: &DetBox, b: &DetBox) -> f64 {
    match (a, b) {
        (DetBox::Rect(a), DetBox::Rect(b)) => iou_axis_aligned(a, b),
        (DetBox::Quad(a), DetBox::Quad(b)) => iou_rotated(a, b),
        (DetBox::Frontal(a), DetBox::Frontal(b)) => iou_axis_aligned(a, b),
        (DetBox::Rect(r), DetBox::Quad(q)) | (DetBox::Quad(q), DetBox::Rect(r)) => {
            iou_rotated(&rect_quad(r), q)
        }
        _ => 0.0,
    }
}

fn rect_quad(r: &BevRect) -> BevQuad {
    let [x1, z1, x2, z2] = r.canonical().to_meters();
    BevQuad {
        vertices: [
            BevPoint::new(x1, z1),
            BevPoint::new(x2, z1),
            BevPoint::new(x2, z2),
            BevPoint::new(x1, z2),
        ],
    }
}

/// Which box of a label is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Geometry {
    /// Enclosing axis-aligned BEV rectangle (the BR3 output form).
    #[default]
    Bev,
    /// Rotated BEV footprint.
    BevRotated,
    /// Frontal 2D bounding box.
    Frontal,
}

impl std::str::FromStr for Geometry {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(Geometry::Bev),
            "bev-rotated" | "rotated" => Ok(Geometry::BevRotated),
            "frontal" | "2d" => Ok(Geometry::Frontal),
            other => Err(EvalError::UnknownGeometry(other.to_string())),
        }
    }
}

impl Geometry {
    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::Bev => "bev",
            Geometry::BevRotated => "bev-rotated",
            Geometry::Frontal => "frontal",
        }
    }

    pub fn label_box(self, r: &LabelRecord) -> Result<DetBox> {
        Ok(match self {
            Geometry::Bev => DetBox::Rect(bev_axis_aligned_normalized(&bev_footprint(&r.box3d()))?),
            Geometry::BevRotated => DetBox::Quad(bev_footprint(&r.box3d())),
            Geometry::Frontal => DetBox::Frontal(r.bbox),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub bbox: DetBox,
    pub score: f64,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub bbox: DetBox,
    pub class_name: String,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Matched only a box outside the active tier; excluded from counting.
    Ignored,
}

/// Greedy matching. Returns `(detection index, flag)` in descending score
/// order, ties kept in input order. Ground truths with `ignore[i]` absorb
/// detections without producing true positives.
pub fn match_detections(
    dets: &[DetectionRecord],
    gts: &[DetBox],
    ignore: &[bool],
    iou_thr: f64,
    iou_fn: impl Fn(&DetBox, &DetBox) -> f64,
) -> Vec<(usize, MatchFlag)> {
    debug_assert_eq!(gts.len(), ignore.len());
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut used = vec![false; gts.len()];
    order
        .into_iter()
        .map(|di| {
            let mut best: Option<(usize, f64)> = None;
            let mut hits_ignored = false;
            for (gi, g) in gts.iter().enumerate() {
                let iou = iou_fn(&dets[di].bbox, g);
                if iou < iou_thr {
                    continue;
                }
                if ignore[gi] {
                    hits_ignored = true;
                } else if !used[gi] && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            let flag = match best {
                Some((gi, _)) => {
                    used[gi] = true;
                    MatchFlag::Tp
                }
                None if hits_ignored => MatchFlag::Ignored,
                None => MatchFlag::Fp,
            };
            (di, flag)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// True positives among the first `rank` counted detections.
    pub tp: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
}

/// Running precision/recall after each counted detection; `true` marks a TP.
pub fn precision_recall_curve(flags: &[bool], num_gt: usize) -> PRCurve {
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0;
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        let recall = if num_gt == 0 {
            0.0
        } else {
            tp as f64 / num_gt as f64
        };
        points.push(PrPoint {
            recall,
            precision: tp as f64 / (i + 1) as f64,
            tp,
            rank: i + 1,
        });
    }
    PRCurve {
        tp,
        fp: flags.len() - tp,
        num_gt,
        points,
    }
}

/// Mean over recall levels 0, 0.1, ..., 1 of the best precision reached at
/// or beyond that recall. Recall levels are compared in integer form
/// (`10 * tp >= k * num_gt`) so level boundaries are exact.
pub fn ap_11point(curve: &PRCurve) -> f64 {
    if curve.num_gt == 0 {
        return if curve.points.is_empty() { 1.0 } else { 0.0 };
    }
    let mut sum = 0.0;
    for k in 0..=10usize {
        let best = curve
            .points
            .iter()
            .filter(|p| 10 * p.tp >= k * curve.num_gt)
            .map(|p| p.precision)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 11.0
}

/// Per-frame detections and ground truth, keyed by frame id.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub id: String,
    pub dets: Vec<DetectionRecord>,
    pub gts: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApCell {
    pub tier: Difficulty,
    pub iou_thr: f64,
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
    pub curve: PRCurve,
}

/// Pairs prediction and ground-truth frames by id. Ground-truth frames
/// without predictions get an empty detection list.
pub fn align_frames(
    preds: Vec<(String, Vec<DetectionRecord>)>,
    gts: Vec<(String, Vec<GroundTruth>)>,
) -> Result<Vec<Frame>> {
    let mut frames: Vec<Frame> = gts
        .into_iter()
        .map(|(id, gts)| Frame {
            id,
            dets: Vec::new(),
            gts,
        })
        .collect();
    for (id, dets) in preds {
        let f = frames
            .iter_mut()
            .find(|f| f.id == id)
            .ok_or_else(|| EvalError::FrameMismatch(id.clone()))?;
        f.dets.extend(dets);
    }
    Ok(frames)
}

/// AP per (threshold, tier) for one class, pooling matches across frames.
pub fn evaluate_ap_table(
    frames: &[Frame],
    thresholds: &[f64],
    tiers: &[Difficulty],
    class_name: &str,
) -> Vec<ApCell> {
    let mut cells = Vec::new();
    for &tier in tiers {
        for &thr in thresholds {
            let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
            let mut num_gt = 0;
            for (fi, f) in frames.iter().enumerate() {
                let gts: Vec<&GroundTruth> = f
                    .gts
                    .iter()
                    .filter(|g| g.class_name == class_name)
                    .collect();
                let boxes: Vec<DetBox> = gts.iter().map(|g| g.bbox).collect();
                let ignore: Vec<bool> = gts.iter().map(|g| !g.difficulty.within(tier)).collect();
                num_gt += ignore.iter().filter(|&&i| !i).count();
                let dets: Vec<DetectionRecord> = f
                    .dets
                    .iter()
                    .filter(|d| d.class_name == class_name)
                    .cloned()
                    .collect();
                for (di, flag) in match_detections(&dets, &boxes, &ignore, thr, box_iou) {
                    if flag != MatchFlag::Ignored {
                        scored.push((dets[di].score, fi, di, flag == MatchFlag::Tp));
                    }
                }
            }
            // descending score, then frame order, then detection order
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let flags: Vec<bool> = scored.iter().map(|s| s.3).collect();
            let curve = precision_recall_curve(&flags, num_gt);
            cells.push(ApCell {
                tier,
                iou_thr: thr,
                ap: ap_11point(&curve),
                num_gt,
                num_det: flags.len(),
                curve,
            });
        }
    }
    cells
}

/// Fraction of prediction/ground-truth pairs with IoU at or above `thr`.
pub fn iou_hit_rate(dets: &[BevRect], gts: &[BevRect], thr: f64) -> Result<f64> {
    if dets.len() != gts.len() {
        return Err(EvalError::LengthMismatch {
            dets: dets.len(),
            gts: gts.len(),
        });
    }
    if dets.is_empty() {
        return Ok(0.0);
    }
    let hits = dets
        .iter()
        .zip(gts)
        .filter(|(d, g)| iou_axis_aligned(&d.canonical(), &g.canonical()) >= thr)
        .count();
    Ok(hits as f64 / dets.len() as f64)
}

/// Share of ground-truth boxes of `class_name` whose best IoU against any
/// detection of the same frame reaches `thr`.
pub fn frame_hit_rate(frames: &[Frame], thr: f64, class_name: &str) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for f in frames {
        let dets: Vec<&DetectionRecord> = f
            .dets
            .iter()
            .filter(|d| d.class_name == class_name)
            .collect();
        for g in f.gts.iter().filter(|g| g.class_name == class_name) {
            total += 1;
            if dets.iter().any(|d| box_iou(&d.bbox, &g.bbox) >= thr) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Confidence of a regressed box: agreement between the BR4 depth and the
/// BR3 rectangle center, exp(-|dz| / 5 m).
pub fn consistency_score(p: &Prediction) -> f64 {
    let dz = (p.target.tz - p.bev.center_z()).abs() * Z_RANGE;
    (-dz / 5.0).exp()
}

/// KITTI label line for a prediction. `bbox` is the frontal box in pixels.
pub fn prediction_label(p: &Prediction, bbox: Box2D, class_name: &str) -> Result<LabelRecord> {
    let b = denormalize_targets(&p.target)?;
    Ok(LabelRecord {
        class_name: class_name.to_string(),
        truncated: 0.0,
        occluded: 0,
        alpha: wrap_angle(b.yaw - b.x.atan2(b.z)),
        bbox,
        h: b.h,
        w: b.w,
        l: b.l,
        x: b.x,
        y: b.y,
        z: b.z,
        rotation_y: b.yaw,
        score: Some(consistency_score(p)),
    })
}

pub fn ap_table_csv(cells: &[ApCell]) -> String {
    let mut out = String::from("tier,iou_thr,ap,num_gt,num_det\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{}",
            c.tier, c.iou_thr, c.ap, c.num_gt, c.num_det
        );
    }
    out
}

pub fn pr_curve_csv(curve: &PRCurve) -> String {
    let mut out = String::from("rank,tp,recall,precision\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            p.rank, p.tp, p.recall, p.precision
        );
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `ap_table.csv` and one `prcurve_<tier>_<thr>.csv` per cell.
pub fn write_ap_outputs(cells: &[ApCell], dir: &Path) -> Result<()> {
    write(&dir.join("ap_table.csv"), &ap_table_csv(cells))?;
    for c in cells {
        let name = format!(
            "prcurve_{}_{:02}.csv",
            c.tier,
            (c.iou_thr * 100.0).round() as u32
        );
        write(&dir.join(name), &pr_curve_csv(&c.curve))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x: f64, z: f64) -> DetBox {
        DetBox::Rect(BevRect::new(x - 0.05, z - 0.02, x + 0.05, z + 0.02))
    }

    fn det(b: DetBox, score: f64) -> DetectionRecord {
        DetectionRecord {
            bbox: b,
            score,
            class_name: "Car".into(),
        }
    }

    fn gt(b: DetBox, d: Difficulty) -> GroundTruth {
        GroundTruth {
            bbox: b,
            class_name: "Car".into(),
            difficulty: d,
        }
    }

    fn flags(m: &[(usize, MatchFlag)]) -> Vec<MatchFlag> {
        m.iter().map(|x| x.1).collect()
    }

    #[test]
    fn matching_examples() {
        let g = rect(0.0, 0.0);
        let m = match_detections(&[det(g, 0.9)], &[g], &[false], 0.5, box_iou);
        assert_eq!(flags(&m), vec![MatchFlag::Tp]);
        let m = match_detections(&[det(g, 0.9), det(g, 0.8)], &[g], &[false], 0.5, box_iou);
        assert_eq!(flags(&m), vec![MatchFlag::Tp, MatchFlag::Fp]);
        // shifted so that IoU = 0.45
        let DetBox::Rect(r) = g else { unreachable!() };
        let w = r.x2 - r.x1;
        let shift = w * (1.0 - 0.45) / (1.0 + 0.45);
        let d = DetBox::Rect(BevRect::new(r.x1 + shift, r.z1, r.x2 + shift, r.z2));
        assert!((box_iou(&d, &g) - 0.45).abs() < 1e-9);
        let m = match_detections(&[det(d, 0.9)], &[g], &[false], 0.5, box_iou);
        assert_eq!(flags(&m), vec![MatchFlag::Fp]);
        let m = match_detections(&[det(g, 0.9)], &[g], &[true], 0.5, box_iou);
        assert_eq!(flags(&m), vec![MatchFlag::Ignored]);
    }

    #[test]
    fn curve_examples() {
        let c = precision_recall_curve(&[true, false, true], 2);
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(pts, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
        assert!((ap_11point(&c) - 28.0 / 33.0).abs() < 1e-15);
        let c = precision_recall_curve(&[false, false], 3);
        assert!(c.points.iter().all(|p| p.recall == 0.0));
        assert_eq!(ap_11point(&c), 0.0);
        let c = precision_recall_curve(&[true, true], 2);
        assert_eq!((c.points[1].recall, c.points[1].precision), (1.0, 1.0));
        assert_eq!(ap_11point(&precision_recall_curve(&[true], 1)), 1.0);
        assert_eq!(ap_11point(&precision_recall_curve(&[], 4)), 0.0);
        assert_eq!(ap_11point(&precision_recall_curve(&[], 0)), 1.0);
        assert_eq!(ap_11point(&precision_recall_curve(&[false], 0)), 0.0);
    }

    #[test]
    fn hit_rate_examples() {
        let g = BevRect::new(0.0, 0.0, 0.1, 0.1);
        let far = BevRect::new(0.5, 0.5, 0.6, 0.6);
        assert_eq!(iou_hit_rate(&[g, g], &[g, g], 0.5).unwrap(), 1.0);
        assert_eq!(iou_hit_rate(&[far], &[g], 0.5).unwrap(), 0.0);
        assert!(iou_hit_rate(&[g], &[], 0.5).is_err());
    }

    #[test]
    fn perfect_frame_scores_one_everywhere() {
        let frames = vec![Frame {
            id: "000000".into(),
            dets: vec![det(rect(0.0, 0.0), 0.9), det(rect(0.3, 0.2), 0.5)],
            gts: vec![
                gt(rect(0.0, 0.0), Difficulty::Easy),
                gt(rect(0.3, 0.2), Difficulty::Hard),
            ],
        }];
        let cells = evaluate_ap_table(&frames, &IOU_THRESHOLDS, &Difficulty::TIERS, "Car");
        assert_eq!(cells.len(), 9);
        assert!(cells.iter().all(|c| c.ap == 1.0), "{cells:?}");
        assert_eq!(cells[0].num_gt, 1);
        assert_eq!(
            cells[0].num_det, 1,
            "the hard-tier match is ignored at easy"
        );
        assert_eq!(cells[8].num_gt, 2);
    }

    #[test]
    fn unmatched_prediction_frame_is_an_error() {
        let err = align_frames(vec![("9".into(), vec![])], vec![("1".into(), vec![])]).unwrap_err();
        assert!(matches!(err, EvalError::FrameMismatch(_)));
    }

    #[test]
    fn geometry_tokens() {
        assert_eq!("BEV".parse::<Geometry>().unwrap(), Geometry::Bev);
        assert!("3d".parse::<Geometry>().is_err());
    }
}
