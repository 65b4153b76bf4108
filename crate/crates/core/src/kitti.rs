//! KITTI object label and calibration text formats.

use crate::geometry::{Box2D, Box3D, CameraIntrinsics};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: invalid bbox ({x1}, {y1}, {x2}, {y2})")]
    InvalidBbox {
        line: usize,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },
    #[error("calibration has no P2 row")]
    MissingP2,
    #[error("malformed P2 row: {0}")]
    MalformedMatrix(String),
    #[error("bbox ({x1}, {y1}, {x2}, {y2}) is outside the {w}x{h} image")]
    OutOfImage {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        w: f64,
        h: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, KittiError>;

/// One object line of a KITTI label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub class_name: String,
    pub truncated: f64,
    pub occluded: u8,
    pub alpha: f64,
    pub bbox: Box2D,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn box3d(&self) -> Box3D {
        Box3D::new(
            self.x,
            self.y,
            self.z,
            self.w,
            self.l,
            self.h,
            self.rotation_y,
        )
    }

    pub fn difficulty(&self) -> Difficulty {
        classify_difficulty(self)
    }
}

/// KITTI difficulty tiers. A tier's evaluation set includes every object at
/// that tier or an easier one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const TIERS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    /// Whether an object of difficulty `self` counts when evaluating `tier`.
    pub fn within(self, tier: Difficulty) -> bool {
        self != Difficulty::Ignored && self <= tier
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "moderate" => Ok(Difficulty::Moderate),
            "hard" => Ok(Difficulty::Hard),
            "ignored" => Ok(Difficulty::Ignored),
            other => Err(format!("unknown difficulty tier `{other}`")),
        }
    }
}

const MIN_HEIGHT: [f64; 3] = [40.0, 25.0, 25.0];
const MAX_OCCLUSION: [u8; 3] = [0, 1, 2];
const MAX_TRUNCATION: [f64; 3] = [0.15, 0.30, 0.50];

pub fn classify_difficulty(r: &LabelRecord) -> Difficulty {
    difficulty_for(r.bbox.height(), r.occluded, r.truncated)
}

pub fn difficulty_for(height_px: f64, occluded: u8, truncated: f64) -> Difficulty {
    for (i, tier) in Difficulty::TIERS.into_iter().enumerate() {
        if height_px >= MIN_HEIGHT[i]
            && occluded <= MAX_OCCLUSION[i]
            && truncated <= MAX_TRUNCATION[i]
        {
            return tier;
        }
    }
    Difficulty::Ignored
}

fn parse_f64(tok: &str, line: usize, name: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| KittiError::MalformedLine {
            line,
            reason: format!("field `{name}` is not a number: `{tok}`"),
        })
}

/// Parses one label line. `line` is only used for diagnostics.
pub fn parse_label_line_at(text: &str, line: usize) -> Result<LabelRecord> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != 15 && toks.len() != 16 {
        return Err(KittiError::MalformedLine {
            line,
            reason: format!("expected 15 or 16 fields, found {}", toks.len()),
        });
    }
    const NAMES: [&str; 15] = [
        "type",
        "truncated",
        "occluded",
        "alpha",
        "left",
        "top",
        "right",
        "bottom",
        "height",
        "width",
        "length",
        "x",
        "y",
        "z",
        "rotation_y",
    ];
    let mut v = [0.0f64; 14];
    for (i, slot) in v.iter_mut().enumerate() {
        *slot = parse_f64(toks[i + 1], line, NAMES[i + 1])?;
    }
    let occluded = toks[2]
        .parse::<i64>()
        .ok()
        .filter(|o| (0..=3).contains(o))
        .ok_or_else(|| KittiError::MalformedLine {
            line,
            reason: format!(
                "field `occluded` must be an integer in 0..=3: `{}`",
                toks[2]
            ),
        })? as u8;
    let bbox = Box2D::new(v[3], v[4], v[5], v[6]);
    if !bbox.is_valid() {
        return Err(KittiError::InvalidBbox {
            line,
            x1: bbox.x1,
            y1: bbox.y1,
            x2: bbox.x2,
            y2: bbox.y2,
        });
    }
    if v[7] < 0.0 || v[8] < 0.0 || v[9] < 0.0 {
        return Err(KittiError::MalformedLine {
            line,
            reason: "negative dimension".into(),
        });
    }
    let score = match toks.get(15) {
        Some(t) => Some(parse_f64(t, line, "score")?),
        None => None,
    };
    Ok(LabelRecord {
        class_name: toks[0].to_string(),
        truncated: v[0],
        occluded,
        alpha: v[2],
        bbox,
        h: v[7],
        w: v[8],
        l: v[9],
        x: v[10],
        y: v[11],
        z: v[12],
        rotation_y: v[13],
        score,
    })
}

pub fn parse_label_line(text: &str) -> Result<LabelRecord> {
    parse_label_line_at(text, 1)
}

/// Canonical KITTI text form, fixed two decimals (scores keep four).
pub fn serialize_label(r: &LabelRecord) -> String {
    let mut s = String::with_capacity(96);
    write!(
        s,
        "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        r.class_name,
        r.truncated,
        r.occluded,
        r.alpha,
        r.bbox.x1,
        r.bbox.y1,
        r.bbox.x2,
        r.bbox.y2,
        r.h,
        r.w,
        r.l,
        r.x,
        r.y,
        r.z,
        r.rotation_y
    )
    .unwrap();
    if let Some(score) = r.score {
        write!(s, " {score:.4}").unwrap();
    }
    s
}

/// Parses every non-blank line; errors report their 1-based line number.
pub fn parse_label_file(text: &str) -> Result<Vec<LabelRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line_at(l, i + 1))
        .collect()
}

pub fn serialize_label_file(records: &[LabelRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serialize_label(r));
        out.push('\n');
    }
    out
}

/// Reads fx, fy, cx, cy from the `P2:` row. The image size is not part of
/// the calibration file and defaults to the KITTI 1242x375 frame.
pub fn parse_calib(text: &str) -> Result<CameraIntrinsics> {
    let row = text
        .lines()
        .find_map(|l| l.trim_start().strip_prefix("P2:"))
        .ok_or(KittiError::MissingP2)?;
    let vals: Vec<f64> = row
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| KittiError::MalformedMatrix(format!("not a number: `{t}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != 12 {
        return Err(KittiError::MalformedMatrix(format!(
            "expected 12 values, found {}",
            vals.len()
        )));
    }
    let k = CameraIntrinsics {
        fx: vals[0],
        fy: vals[5],
        cx: vals[2],
        cy: vals[6],
        ..CameraIntrinsics::kitti_like()
    };
    if !(k.fx > 0.0 && k.fy > 0.0) {
        return Err(KittiError::MalformedMatrix(
            "focal lengths must be positive".into(),
        ));
    }
    Ok(k)
}

/// Maps a pixel box into [-1, 1] image coordinates.
pub fn normalize_bbox(b: &Box2D, image_w: f64, image_h: f64) -> Result<Box2D> {
    let inside = |v: f64, hi: f64| (0.0..=hi).contains(&v);
    if !(inside(b.x1, image_w)
        && inside(b.x2, image_w)
        && inside(b.y1, image_h)
        && inside(b.y2, image_h))
    {
        return Err(KittiError::OutOfImage {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            w: image_w,
            h: image_h,
        });
    }
    Ok(Box2D::new(
        2.0 * b.x1 / image_w - 1.0,
        2.0 * b.y1 / image_h - 1.0,
        2.0 * b.x2 / image_w - 1.0,
        2.0 * b.y2 / image_h - 1.0,
    ))
}

pub fn denormalize_bbox(b: &Box2D, image_w: f64, image_h: f64) -> Box2D {
    Box2D::new(
        (b.x1 + 1.0) * 0.5 * image_w,
        (b.y1 + 1.0) * 0.5 * image_h,
        (b.x2 + 1.0) * 0.5 * image_w,
        (b.y2 + 1.0) * 0.5 * image_h,
    )
}

/// Reads a split index: one frame id per line, `#` comments allowed.
pub fn parse_split_index(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Lists `*.txt` label files in a directory (or its `label_2/` child),
/// sorted by file name.
pub fn list_label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let base = if dir.join("label_2").is_dir() {
        dir.join("label_2")
    } else {
        dir.to_path_buf()
    };
    let rd = std::fs::read_dir(&base).map_err(|source| KittiError::Io {
        path: base.clone(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_label_file(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_label_file(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str =
        "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

    #[test]
    fn parses_reference_line_field_by_field() {
        let r = parse_label_line(CAR).unwrap();
        assert_eq!(r.class_name, "Car");
        assert_eq!(r.truncated, 0.0);
        assert_eq!(r.occluded, 0);
        assert_eq!(r.alpha, -1.58);
        assert_eq!(r.bbox, Box2D::new(587.01, 173.33, 614.12, 200.12));
        assert_eq!((r.h, r.w, r.l), (1.65, 1.67, 3.64));
        assert_eq!((r.x, r.y, r.z), (-0.65, 1.71, 46.70));
        assert_eq!(r.rotation_y, -1.59);
        assert_eq!(r.score, None);
        assert_eq!(serialize_label(&r), CAR);
    }

    #[test]
    fn score_column_is_optional() {
        let r = parse_label_line(&format!("{CAR} 0.8731")).unwrap();
        assert_eq!(r.score, Some(0.8731));
        assert!(serialize_label(&r).ends_with(" 0.8731"));
    }

    #[test]
    fn rejects_wrong_field_count() {
        let short: Vec<&str> = CAR.split(' ').take(14).collect();
        let err = parse_label_line(&short.join(" ")).unwrap_err();
        assert!(matches!(err, KittiError::MalformedLine { .. }));
        assert!(err.to_string().contains("found 14"));
    }

    #[test]
    fn rejects_non_numeric_and_bad_bbox() {
        let bad = CAR.replace("46.70", "far");
        assert!(matches!(
            parse_label_line(&bad),
            Err(KittiError::MalformedLine { .. })
        ));
        let flipped = CAR.replace("587.01 173.33 614.12", "615.00 173.33 614.12");
        assert!(matches!(
            parse_label_line(&flipped),
            Err(KittiError::InvalidBbox { .. })
        ));
        let occ = CAR.replacen(" 0 ", " 7 ", 1);
        assert!(parse_label_line(&occ).is_err());
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let text = format!("{CAR}\n\nCar 1 2\n");
        match parse_label_file(&text) {
            Err(KittiError::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calib_p2() {
        let text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nP2: 721.54 0 609.55 44.85 0 721.54 172.85 0.2163 0 0 1 0.0027\n";
        let k = parse_calib(text).unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (721.54, 721.54, 609.55, 172.85));
        let ident = parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0").unwrap();
        assert_eq!(
            (ident.fx, ident.fy, ident.cx, ident.cy),
            (1.0, 1.0, 0.0, 0.0)
        );
        assert!(matches!(
            parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1"),
            Err(KittiError::MalformedMatrix(_))
        ));
        assert!(matches!(
            parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0"),
            Err(KittiError::MissingP2)
        ));
    }

    fn rec(height: f64, occ: u8, trunc: f64) -> LabelRecord {
        let mut r = parse_label_line(CAR).unwrap();
        r.bbox = Box2D::new(100.0, 100.0, 150.0, 100.0 + height);
        r.occluded = occ;
        r.truncated = trunc;
        r
    }

    #[test]
    fn difficulty_examples() {
        assert_eq!(classify_difficulty(&rec(50.0, 0, 0.0)), Difficulty::Easy);
        assert_eq!(
            classify_difficulty(&rec(30.0, 1, 0.2)),
            Difficulty::Moderate
        );
        assert_eq!(classify_difficulty(&rec(20.0, 0, 0.0)), Difficulty::Ignored);
        assert!(Difficulty::Easy.within(Difficulty::Hard));
        assert!(!Difficulty::Hard.within(Difficulty::Moderate));
        assert!(!Difficulty::Ignored.within(Difficulty::Hard));
    }

    #[test]
    fn difficulty_is_monotone() {
        let heights = [10.0, 24.9, 25.0, 30.0, 39.9, 40.0, 80.0];
        let truncs = [0.0, 0.15, 0.2, 0.3, 0.4, 0.5, 0.7];
        for (hi, &h) in heights.iter().enumerate() {
            for occ in 0..=3u8 {
                for (ti, &t) in truncs.iter().enumerate() {
                    let d = difficulty_for(h, occ, t);
                    if hi > 0 {
                        assert!(difficulty_for(heights[hi - 1], occ, t) >= d);
                    }
                    if occ < 3 {
                        assert!(difficulty_for(h, occ + 1, t) >= d);
                    }
                    if ti + 1 < truncs.len() {
                        assert!(difficulty_for(h, occ, truncs[ti + 1]) >= d);
                    }
                }
            }
        }
    }

    #[test]
    fn bbox_normalization() {
        let full = normalize_bbox(&Box2D::new(0.0, 0.0, 1242.0, 375.0), 1242.0, 375.0).unwrap();
        assert_eq!(full, Box2D::new(-1.0, -1.0, 1.0, 1.0));
        let q = normalize_bbox(&Box2D::new(0.0, 0.0, 621.0, 187.5), 1242.0, 375.0).unwrap();
        assert_eq!(q, Box2D::new(-1.0, -1.0, 0.0, 0.0));
        let b = Box2D::new(10.5, 20.25, 300.0, 200.0);
        let n = normalize_bbox(&b, 1242.0, 375.0).unwrap();
        assert!(n.x1 < n.x2 && n.y1 < n.y2);
        let back = denormalize_bbox(&n, 1242.0, 375.0);
        for (a, b) in back.to_array().iter().zip(b.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(matches!(
            normalize_bbox(&Box2D::new(-1.0, 0.0, 10.0, 10.0), 1242.0, 375.0),
            Err(KittiError::OutOfImage { .. })
        ));
    }

    #[test]
    fn split_index() {
        assert_eq!(
            parse_split_index("000001\n# c\n\n000007 # x\n"),
            vec!["000001", "000007"]
        );
    }
}
