//! Box geometry in the camera frame (x right, y down, z forward).
//!
//! Boxes are anchored at the center of their bottom face and rotate about
//! the vertical (y) axis. Bird's-eye-view quantities live in the (x, z)
//! ground plane; the normalized BEV frame shares its constants with the
//! regression targets so that both heads agree on where an object is.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Lateral half-extent of the normalized frame, meters.
pub const X_RANGE: f64 = 40.0;
/// Center and half-extent of the depth axis, meters.
pub const Z_CENTER: f64 = 50.0;
pub const Z_RANGE: f64 = 50.0;
pub const Y_CENTER: f64 = 2.0;
pub const Y_RANGE: f64 = 2.0;
pub const W_CENTER: f64 = 1.5;
pub const L_CENTER: f64 = 3.5;
pub const H_CENTER: f64 = 1.5;

const DEGENERATE_YAW_NORM2: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("{field} = {value} is outside the normalizable range [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("yaw is undefined for (sin, cos) = ({sin}, {cos})")]
    DegenerateYaw { sin: f64, cos: f64 },
    #[error("point at z = {z} is not in front of the camera")]
    BehindCamera { z: f64 },
    #[error("projected box lies entirely outside the image")]
    FullyOutsideImage,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// A point in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevPoint {
    pub x: f64,
    pub z: f64,
}

impl BevPoint {
    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }
}

/// Oriented 3D box, bottom-center anchored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    pub const fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            w,
            l,
            h,
            yaw,
        }
    }

    pub fn is_valid(&self) -> bool {
        let fields = [self.x, self.y, self.z, self.w, self.l, self.h, self.yaw];
        fields.iter().all(|v| v.is_finite())
            && self.w > 0.0
            && self.l > 0.0
            && self.h > 0.0
            && (-PI..=PI).contains(&self.yaw)
    }

    /// The box reflected through the camera's y-z plane (x -> -x).
    pub fn mirrored(&self) -> Self {
        Self {
            x: -self.x,
            yaw: wrap_angle(PI - self.yaw),
            ..*self
        }
    }
}

/// Regression targets, each nominally in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub tw: f64,
    pub tl: f64,
    pub th: f64,
    pub tsin: f64,
    pub tcos: f64,
}

impl TargetVector {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.tx, self.ty, self.tz, self.tw, self.tl, self.th, self.tsin, self.tcos,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            tz: a[2],
            tw: a[3],
            tl: a[4],
            th: a[5],
            tsin: a[6],
            tcos: a[7],
        }
    }

    /// Seven-value layout: the yaw pair collapses to `yaw / pi`.
    pub fn to_array7(&self) -> [f64; 7] {
        let yaw = self.tsin.atan2(self.tcos);
        [
            self.tx,
            self.ty,
            self.tz,
            self.tw,
            self.tl,
            self.th,
            yaw / PI,
        ]
    }

    pub fn from_array7(a: [f64; 7]) -> Self {
        let yaw = a[6] * PI;
        Self {
            tx: a[0],
            ty: a[1],
            tz: a[2],
            tw: a[3],
            tl: a[4],
            th: a[5],
            tsin: yaw.sin(),
            tcos: yaw.cos(),
        }
    }
}

/// Axis-aligned image rectangle (pixels, or [-1, 1] when normalized).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Axis-aligned top-view rectangle in the normalized BEV frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevRect {
    pub x1: f64,
    pub z1: f64,
    pub x2: f64,
    pub z2: f64,
}

impl BevRect {
    pub const fn new(x1: f64, z1: f64, x2: f64, z2: f64) -> Self {
        Self { x1, z1, x2, z2 }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.z1, self.x2, self.z2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Sorts each coordinate pair so that `x1 <= x2` and `z1 <= z2`.
    pub fn canonical(&self) -> Self {
        Self {
            x1: self.x1.min(self.x2),
            x2: self.x1.max(self.x2),
            z1: self.z1.min(self.z2),
            z2: self.z1.max(self.z2),
        }
    }

    /// Normalized depth of the rectangle center.
    pub fn center_z(&self) -> f64 {
        0.5 * (self.z1 + self.z2)
    }

    pub fn center_x(&self) -> f64 {
        0.5 * (self.x1 + self.x2)
    }

    /// Rectangle in meters as `(x1, z1, x2, z2)`.
    pub fn to_meters(&self) -> [f64; 4] {
        [
            self.x1 * X_RANGE,
            self.z1 * Z_RANGE + Z_CENTER,
            self.x2 * X_RANGE,
            self.z2 * Z_RANGE + Z_CENTER,
        ]
    }

    pub fn from_meters(x1: f64, z1: f64, x2: f64, z2: f64) -> Self {
        Self {
            x1: x1 / X_RANGE,
            z1: (z1 - Z_CENTER) / Z_RANGE,
            x2: x2 / X_RANGE,
            z2: (z2 - Z_CENTER) / Z_RANGE,
        }
    }
}

/// Convex top-view quadrilateral, vertices counter-clockwise, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevQuad {
    pub vertices: [BevPoint; 4],
}

impl BevQuad {
    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Enclosing axis-aligned rectangle in meters, `(x1, z1, x2, z2)`.
    pub fn bounds(&self) -> [f64; 4] {
        let mut b = [
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ];
        for p in &self.vertices {
            b[0] = b[0].min(p.x);
            b[1] = b[1].min(p.z);
            b[2] = b[2].max(p.x);
            b[3] = b[3].max(p.z);
        }
        b
    }

    /// Quad covering an axis-aligned rectangle given in meters.
    pub fn from_bounds(x1: f64, z1: f64, x2: f64, z2: f64) -> Self {
        Self {
            vertices: [
                BevPoint::new(x1, z1),
                BevPoint::new(x2, z1),
                BevPoint::new(x2, z2),
                BevPoint::new(x1, z2),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl CameraIntrinsics {
    /// KITTI-like camera with the principal point at the image center.
    pub fn kitti_like() -> Self {
        Self {
            fx: 721.5,
            fy: 721.5,
            cx: 621.0,
            cy: 187.5,
            image_w: 1242,
            image_h: 375,
        }
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::kitti_like()
    }
}

fn check_range(field: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(GeometryError::OutOfRange {
            field,
            value,
            min,
            max,
        })
    }
}

fn check_positive(field: &'static str, value: f64, max: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 && value <= max {
        Ok(())
    } else {
        Err(GeometryError::OutOfRange {
            field,
            value,
            min: 0.0,
            max,
        })
    }
}

pub fn normalize_targets(b: &Box3D) -> Result<TargetVector> {
    check_range("x", b.x, -X_RANGE, X_RANGE)?;
    check_range("y", b.y, Y_CENTER - Y_RANGE, Y_CENTER + Y_RANGE)?;
    check_range("z", b.z, Z_CENTER - Z_RANGE, Z_CENTER + Z_RANGE)?;
    check_positive("w", b.w, 2.0 * W_CENTER)?;
    check_positive("l", b.l, 2.0 * L_CENTER)?;
    check_positive("h", b.h, 2.0 * H_CENTER)?;
    if !b.yaw.is_finite() {
        return Err(GeometryError::OutOfRange {
            field: "yaw",
            value: b.yaw,
            min: -PI,
            max: PI,
        });
    }
    Ok(normalize_unchecked(b))
}

/// Like [`normalize_targets`] but clamps every component to [-1, 1].
pub fn normalize_targets_clamped(b: &Box3D) -> TargetVector {
    let t = normalize_unchecked(b);
    let c = |v: f64| v.clamp(-1.0, 1.0);
    TargetVector {
        tx: c(t.tx),
        ty: c(t.ty),
        tz: c(t.tz),
        tw: c(t.tw),
        tl: c(t.tl),
        th: c(t.th),
        tsin: t.tsin,
        tcos: t.tcos,
    }
}

fn normalize_unchecked(b: &Box3D) -> TargetVector {
    TargetVector {
        tx: b.x / X_RANGE,
        ty: (b.y - Y_CENTER) / Y_RANGE,
        tz: (b.z - Z_CENTER) / Z_RANGE,
        tw: (b.w - W_CENTER) / W_CENTER,
        tl: (b.l - L_CENTER) / L_CENTER,
        th: (b.h - H_CENTER) / H_CENTER,
        tsin: b.yaw.sin(),
        tcos: b.yaw.cos(),
    }
}

pub fn denormalize_targets(t: &TargetVector) -> Result<Box3D> {
    let yaw = decode_yaw(t.tsin, t.tcos)?;
    Ok(Box3D {
        x: t.tx * X_RANGE,
        y: t.ty * Y_RANGE + Y_CENTER,
        z: t.tz * Z_RANGE + Z_CENTER,
        w: t.tw * W_CENTER + W_CENTER,
        l: t.tl * L_CENTER + L_CENTER,
        h: t.th * H_CENTER + H_CENTER,
        yaw,
    })
}

pub fn decode_yaw(tsin: f64, tcos: f64) -> Result<f64> {
    if !(tsin * tsin + tcos * tcos >= DEGENERATE_YAW_NORM2) {
        return Err(GeometryError::DegenerateYaw {
            sin: tsin,
            cos: tcos,
        });
    }
    Ok(tsin.atan2(tcos))
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Absolute angular difference in [0, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Corner order: bottom face (y offset 0) first, then the top face, each
/// counter-clockwise in the ground plane starting at (+l/2, +w/2).
pub fn box_corners_3d(b: &Box3D) -> [Point3; 8] {
    let (s, c) = b.yaw.sin_cos();
    let hl = 0.5 * b.l;
    let hw = 0.5 * b.w;
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    let mut out = [Point3::new(0.0, 0.0, 0.0); 8];
    for (face, dy) in [0.0, -b.h].into_iter().enumerate() {
        for (i, &(a, d)) in local.iter().enumerate() {
            out[face * 4 + i] = Point3 {
                x: c * a + s * d + b.x,
                y: dy + b.y,
                z: -s * a + c * d + b.z,
            };
        }
    }
    out
}

/// The twelve box edges as corner index pairs into [`box_corners_3d`].
pub const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// The six faces as corner index quads into [`box_corners_3d`].
pub const BOX_FACES: [[usize; 4]; 6] = [
    [0, 1, 2, 3],
    [4, 5, 6, 7],
    [0, 3, 7, 4],
    [1, 0, 4, 5],
    [2, 1, 5, 6],
    [3, 2, 6, 7],
];

pub fn project_point(k: &CameraIntrinsics, p: &Point3) -> Result<(f64, f64)> {
    if !(p.z > 0.0) {
        return Err(GeometryError::BehindCamera { z: p.z });
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Image-plane extent of a projected box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontalBox {
    pub unclipped: Box2D,
    pub clipped: Box2D,
    /// `1 - clipped_area / unclipped_area`.
    pub truncation: f64,
}

pub fn frontal_bbox(k: &CameraIntrinsics, b: &Box3D) -> Result<FrontalBox> {
    let mut r = Box2D::new(
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in box_corners_3d(b).iter() {
        let (u, v) = project_point(k, p)?;
        r.x1 = r.x1.min(u);
        r.y1 = r.y1.min(v);
        r.x2 = r.x2.max(u);
        r.y2 = r.y2.max(v);
    }
    let (w, h) = (k.image_w as f64, k.image_h as f64);
    let clipped = Box2D::new(
        r.x1.clamp(0.0, w),
        r.y1.clamp(0.0, h),
        r.x2.clamp(0.0, w),
        r.y2.clamp(0.0, h),
    );
    if !clipped.is_valid() {
        return Err(GeometryError::FullyOutsideImage);
    }
    let full = r.area();
    let truncation = if full > 0.0 {
        (1.0 - clipped.area() / full).max(0.0)
    } else {
        0.0
    };
    Ok(FrontalBox {
        unclipped: r,
        clipped,
        truncation,
    })
}

pub fn bev_footprint(b: &Box3D) -> BevQuad {
    let c = box_corners_3d(b);
    BevQuad {
        vertices: [
            BevPoint::new(c[0].x, c[0].z),
            BevPoint::new(c[1].x, c[1].z),
            BevPoint::new(c[2].x, c[2].z),
            BevPoint::new(c[3].x, c[3].z),
        ],
    }
}

pub fn bev_axis_aligned_normalized(q: &BevQuad) -> Result<BevRect> {
    let [x1, z1, x2, z2] = q.bounds();
    check_range("bev x1", x1, -X_RANGE, X_RANGE)?;
    check_range("bev x2", x2, -X_RANGE, X_RANGE)?;
    check_range("bev z1", z1, Z_CENTER - Z_RANGE, Z_CENTER + Z_RANGE)?;
    check_range("bev z2", z2, Z_CENTER - Z_RANGE, Z_CENTER + Z_RANGE)?;
    Ok(BevRect::from_meters(x1, z1, x2, z2))
}

/// Anything with axis-aligned `[x1, y1, x2, y2]` bounds.
pub trait AxisAligned {
    fn bounds(&self) -> [f64; 4];
}

impl AxisAligned for Box2D {
    fn bounds(&self) -> [f64; 4] {
        self.to_array()
    }
}

impl AxisAligned for BevRect {
    fn bounds(&self) -> [f64; 4] {
        self.to_array()
    }
}

impl AxisAligned for [f64; 4] {
    fn bounds(&self) -> [f64; 4] {
        *self
    }
}

pub fn iou_axis_aligned<A: AxisAligned + ?Sized, B: AxisAligned + ?Sized>(a: &A, b: &B) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.bounds();
    let [bx1, by1, bx2, by2] = b.bounds();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn polygon_area(poly: &[BevPoint]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc += p.x * q.z - q.x * p.z;
    }
    0.5 * acc
}

fn cross(o: BevPoint, a: BevPoint, b: BevPoint) -> f64 {
    (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x)
}

/// Clips `subject` against every edge half-plane of the convex, CCW `clip`.
pub fn clip_convex(subject: &[BevPoint], clip: &[BevPoint]) -> Vec<BevPoint> {
    let mut output: Vec<BevPoint> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let dc = cross(a, b, cur);
            let dp = cross(a, b, prev);
            if dc >= 0.0 {
                if dp < 0.0 {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if dp >= 0.0 {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn intersect(p: BevPoint, q: BevPoint, dp: f64, dq: f64) -> BevPoint {
    let t = dp / (dp - dq);
    BevPoint::new(p.x + t * (q.x - p.x), p.z + t * (q.z - p.z))
}

/// IoU of two convex counter-clockwise polygons.
pub fn iou_convex(a: &[BevPoint], b: &[BevPoint]) -> f64 {
    let area_a = polygon_area(a).abs();
    let area_b = polygon_area(b).abs();
    let inter = polygon_area(&clip_convex(a, b)).abs();
    let union = area_a + area_b - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn iou_rotated(a: &BevQuad, b: &BevQuad) -> f64 {
    iou_convex(&a.vertices, &b.vertices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        v.iter().map(|x| (x * 1e9).round() / 1e9).collect()
    }

    #[test]
    fn normalization_examples() {
        let b = Box3D::new(40.0, 2.0, 50.0, 1.5, 3.5, 1.5, FRAC_PI_2);
        let t = normalize_targets(&b).unwrap();
        assert_eq!(t.tx, 1.0);
        assert_eq!(t.ty, 0.0);
        assert_eq!(t.tz, 0.0);
        assert_eq!((t.tw, t.tl, t.th), (0.0, 0.0, 0.0));
        assert_eq!(t.tsin, 1.0);
        assert_abs_diff_eq!(t.tcos, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn normalization_rejects_out_of_range() {
        let b = Box3D::new(41.0, 2.0, 50.0, 1.5, 3.5, 1.5, 0.0);
        assert!(matches!(
            normalize_targets(&b),
            Err(GeometryError::OutOfRange { field: "x", .. })
        ));
        let b = Box3D::new(0.0, 2.0, 50.0, 1.5, 7.5, 1.5, 0.0);
        assert!(normalize_targets(&b).is_err());
        let t = normalize_targets_clamped(&b);
        assert_eq!(t.tl, 1.0);
    }

    #[test]
    fn endpoints_map_to_unit_bounds() {
        let lo = Box3D::new(-40.0, 0.0, 0.0, 3.0, 7.0, 3.0, 0.0);
        let t = normalize_targets(&lo).unwrap();
        assert_eq!((t.tx, t.ty, t.tz), (-1.0, -1.0, -1.0));
        assert_eq!((t.tw, t.tl, t.th), (1.0, 1.0, 1.0));
        let hi = Box3D::new(40.0, 4.0, 100.0, 1.0, 1.0, 1.0, 0.0);
        let t = normalize_targets(&hi).unwrap();
        assert_eq!((t.tx, t.ty, t.tz), (1.0, 1.0, 1.0));
    }

    #[test]
    fn denormalize_center_point() {
        let t = TargetVector::from_array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = denormalize_targets(&t).unwrap();
        assert_eq!(b, Box3D::new(0.0, 2.0, 50.0, 1.5, 3.5, 1.5, 0.0));
    }

    #[test]
    fn yaw_decoding() {
        assert_eq!(decode_yaw(0.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(decode_yaw(1.0, 0.0).unwrap(), FRAC_PI_2);
        assert_abs_diff_eq!(decode_yaw(0.5, 0.0).unwrap(), FRAC_PI_2);
        let th = 2.0f64;
        assert_abs_diff_eq!(
            decode_yaw(0.3 * th.sin(), 0.3 * th.cos()).unwrap(),
            th,
            epsilon = 1e-12
        );
        assert!(matches!(
            decode_yaw(1e-7, 0.0),
            Err(GeometryError::DegenerateYaw { .. })
        ));
    }

    #[test]
    fn seven_value_layout_round_trips_yaw() {
        let t = normalize_targets(&Box3D::new(3.0, 1.7, 20.0, 1.6, 4.0, 1.4, -2.5)).unwrap();
        let back = TargetVector::from_array7(t.to_array7());
        assert_abs_diff_eq!(back.tsin, t.tsin, epsilon = 1e-12);
        assert_abs_diff_eq!(back.tcos, t.tcos, epsilon = 1e-12);
    }

    #[test]
    fn corners_without_rotation() {
        let b = Box3D::new(0.0, 0.0, 0.0, 2.0, 4.0, 2.0, 0.0);
        let c = box_corners_3d(&b);
        assert_eq!(sorted(c.iter().map(|p| p.x).collect()), vec![-2.0, 2.0]);
        assert_eq!(sorted(c.iter().map(|p| p.y).collect()), vec![-2.0, 0.0]);
        assert_eq!(sorted(c.iter().map(|p| p.z).collect()), vec![-1.0, 1.0]);
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let b = Box3D::new(0.0, 0.0, 0.0, 2.0, 4.0, 2.0, FRAC_PI_2);
        let c = box_corners_3d(&b);
        assert_eq!(sorted(c.iter().map(|p| p.x).collect()), vec![-1.0, 1.0]);
        assert_eq!(sorted(c.iter().map(|p| p.z).collect()), vec![-2.0, 2.0]);
    }

    #[test]
    fn half_turn_preserves_corner_set() {
        let a = box_corners_3d(&Box3D::new(1.0, 1.5, 9.0, 1.7, 4.1, 1.5, 0.0));
        let b = box_corners_3d(&Box3D::new(1.0, 1.5, 9.0, 1.7, 4.1, 1.5, PI));
        for p in &a {
            assert!(b.iter().any(|q| (p.x - q.x).abs() < 1e-12
                && (p.y - q.y).abs() < 1e-12
                && (p.z - q.z).abs() < 1e-12));
        }
    }

    #[test]
    fn pinhole_projection() {
        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 0.0,
            cy: 0.0,
            image_w: 100,
            image_h: 100,
        };
        assert_eq!(
            project_point(&k, &Point3::new(2.0, 1.0, 10.0)).unwrap(),
            (20.0, 10.0)
        );
        let k2 = CameraIntrinsics {
            cx: 5.0,
            cy: 7.0,
            ..k
        };
        assert_eq!(
            project_point(&k2, &Point3::new(0.0, 0.0, 3.0)).unwrap(),
            (5.0, 7.0)
        );
        let (u1, v1) = project_point(&k2, &Point3::new(1.0, 2.0, 4.0)).unwrap();
        let (u2, v2) = project_point(&k2, &Point3::new(1.0, 2.0, 8.0)).unwrap();
        assert_abs_diff_eq!(u2 - 5.0, 0.5 * (u1 - 5.0), epsilon = 1e-12);
        assert_abs_diff_eq!(v2 - 7.0, 0.5 * (v1 - 7.0), epsilon = 1e-12);
        assert!(matches!(
            project_point(&k, &Point3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn frontal_bbox_symmetry_and_depth() {
        let k = CameraIntrinsics::kitti_like();
        // Height straddles the optical axis so the box is symmetric in v too.
        let b = Box3D::new(0.0, 0.75, 20.0, 1.6, 3.9, 1.5, 0.0);
        let f = frontal_bbox(&k, &b).unwrap();
        assert_abs_diff_eq!(f.unclipped.x1 + f.unclipped.x2, 2.0 * k.cx, epsilon = 1e-9);
        assert_abs_diff_eq!(f.unclipped.y1 + f.unclipped.y2, 2.0 * k.cy, epsilon = 1e-9);
        assert_eq!(f.truncation, 0.0);
        let far = frontal_bbox(&k, &Box3D { z: 40.0, ..b }).unwrap();
        assert!(far.clipped.area() < f.clipped.area());
    }

    #[test]
    fn frontal_bbox_truncation_half_outside() {
        // Oracle: rasterize the projected extent at 0.01 px and count the
        // fraction of covered samples that fall left of the image border.
        let k = CameraIntrinsics::kitti_like();
        let mut b = Box3D::new(0.0, 1.65, 30.0, 1.6, 3.9, 1.5, 0.0);
        let f = frontal_bbox(&k, &b).unwrap();
        // Shift so that the projected center sits on u = 0.
        let cu = 0.5 * (f.unclipped.x1 + f.unclipped.x2);
        b.x -= (cu - 0.0) * b.z / k.fx;
        let f = frontal_bbox(&k, &b).unwrap();
        let (x1, x2) = (f.unclipped.x1, f.unclipped.x2);
        let steps = ((x2 - x1) / 0.01).ceil() as usize;
        let inside = (0..steps)
            .filter(|i| x1 + (*i as f64 + 0.5) * 0.01 >= 0.0)
            .count();
        let oracle = 1.0 - inside as f64 / steps as f64;
        assert_abs_diff_eq!(f.truncation, oracle, epsilon = 0.01);
        assert_abs_diff_eq!(f.truncation, 0.5, epsilon = 0.02);
    }

    #[test]
    fn frontal_bbox_errors() {
        let k = CameraIntrinsics::kitti_like();
        let behind = Box3D::new(0.0, 1.6, 1.0, 1.6, 3.9, 1.5, FRAC_PI_2);
        assert!(matches!(
            frontal_bbox(&k, &behind),
            Err(GeometryError::BehindCamera { .. })
        ));
        let outside = Box3D::new(-40.0, 1.6, 10.0, 1.6, 3.9, 1.5, 0.0);
        assert_eq!(
            frontal_bbox(&k, &outside),
            Err(GeometryError::FullyOutsideImage)
        );
    }

    #[test]
    fn footprint_examples() {
        let q = bev_footprint(&Box3D::new(0.0, 1.6, 10.0, 2.0, 4.0, 1.5, 0.0));
        assert_eq!(q.bounds(), [-2.0, 9.0, 2.0, 11.0]);
        assert!(q.area() > 0.0);
        let b = Box3D::new(3.0, 1.6, 30.0, 1.8, 4.4, 1.5, PI / 4.0);
        let r = (b.w * b.w + b.l * b.l).sqrt() / 2.0;
        for v in bev_footprint(&b).vertices {
            assert_abs_diff_eq!(
                ((v.x - 3.0).powi(2) + (v.z - 30.0).powi(2)).sqrt(),
                r,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn bev_rect_normalization() {
        let q = bev_footprint(&Box3D::new(0.0, 1.6, 50.0, 2.0, 4.0, 1.5, 0.0));
        let r = bev_axis_aligned_normalized(&q).unwrap();
        assert_abs_diff_eq!(r.x1, -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(r.z1, -0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(r.x2, 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(r.z2, 0.02, epsilon = 1e-15);
        let whole = BevQuad::from_bounds(-40.0, 0.0, 40.0, 100.0);
        assert_eq!(
            bev_axis_aligned_normalized(&whole).unwrap(),
            BevRect::new(-1.0, -1.0, 1.0, 1.0)
        );
        let m = r.to_meters();
        let b = q.bounds();
        for i in 0..4 {
            assert_abs_diff_eq!(m[i], b[i], epsilon = 1e-12);
        }
        let too_far = BevQuad::from_bounds(-1.0, 99.0, 1.0, 101.0);
        assert!(bev_axis_aligned_normalized(&too_far).is_err());
    }

    #[test]
    fn axis_aligned_iou_examples() {
        let a = [0.0, 0.0, 2.0, 2.0];
        assert_eq!(iou_axis_aligned(&a, &a), 1.0);
        assert_eq!(iou_axis_aligned(&a, &[3.0, 3.0, 4.0, 4.0]), 0.0);
        assert_abs_diff_eq!(
            iou_axis_aligned(&a, &[1.0, 1.0, 3.0, 3.0]),
            1.0 / 7.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rotated_iou_examples() {
        let sq = BevQuad::from_bounds(-0.5, -0.5, 0.5, 0.5);
        assert_abs_diff_eq!(iou_rotated(&sq, &sq), 1.0, epsilon = 1e-12);
        let r = 0.5f64.sqrt();
        let diamond = BevQuad {
            vertices: [
                BevPoint::new(r, 0.0),
                BevPoint::new(0.0, r),
                BevPoint::new(-r, 0.0),
                BevPoint::new(0.0, -r),
            ],
        };
        let inter = polygon_area(&clip_convex(&sq.vertices, &diamond.vertices));
        assert_abs_diff_eq!(inter, 2.0 * (2f64.sqrt() - 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(
            iou_rotated(&sq, &diamond),
            1.0 / 2f64.sqrt(),
            epsilon = 1e-9
        );
        let far = BevQuad::from_bounds(10.0, 10.0, 11.0, 11.0);
        assert_eq!(iou_rotated(&sq, &far), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            -40.0..=40.0f64,
            0.0..=4.0f64,
            0.0..=100.0f64,
            0.01..=3.0f64,
            0.01..=7.0f64,
            0.01..=3.0f64,
            -PI..=PI,
        )
            .prop_map(|(x, y, z, w, l, h, yaw)| Box3D::new(x, y, z, w, l, h, yaw))
    }

    proptest! {
        #[test]
        fn normalize_round_trip(b in arb_box()) {
            let t = normalize_targets(&b).unwrap();
            for v in t.to_array() {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
            let back = denormalize_targets(&t).unwrap();
            prop_assert!((back.x - b.x).abs() < 1e-9);
            prop_assert!((back.y - b.y).abs() < 1e-9);
            prop_assert!((back.z - b.z).abs() < 1e-9);
            prop_assert!((back.w - b.w).abs() < 1e-9);
            prop_assert!((back.l - b.l).abs() < 1e-9);
            prop_assert!((back.h - b.h).abs() < 1e-9);
            prop_assert!(angle_diff(back.yaw, b.yaw) < 1e-9);
        }

        #[test]
        fn footprint_area_is_w_times_l(b in arb_box()) {
            let q = bev_footprint(&b);
            prop_assert!((q.area() - b.w * b.l).abs() < 1e-9);
        }

        #[test]
        fn rotated_iou_symmetric_and_rigid(
            a in arb_box(), b in arb_box(), theta in -PI..PI, dx in -5.0..5.0f64, dz in -5.0..5.0f64
        ) {
            let qa = bev_footprint(&a);
            let qb = bev_footprint(&Box3D { x: a.x + (b.x / 40.0), z: a.z + b.z / 50.0, ..b });
            let ab = iou_rotated(&qa, &qb);
            prop_assert!((ab - iou_rotated(&qb, &qa)).abs() < 1e-9);
            prop_assert!((iou_rotated(&qa, &qa) - 1.0).abs() < 1e-9);
            let (s, c) = theta.sin_cos();
            let tf = |q: &BevQuad| BevQuad {
                vertices: q.vertices.map(|p| BevPoint::new(c * p.x - s * p.z + dx, s * p.x + c * p.z + dz)),
            };
            prop_assert!((iou_rotated(&tf(&qa), &tf(&qb)) - ab).abs() < 1e-9);
        }

        #[test]
        fn frontal_area_monotone_in_depth(
            x in -2.0..2.0f64, z in 8.0..80.0f64, dz in 0.0..10.0f64, yaw in -PI..PI
        ) {
            let k = CameraIntrinsics::kitti_like();
            let near = Box3D::new(x, 1.65, z, 1.6, 3.9, 1.5, yaw);
            let far = Box3D { z: z + dz, ..near };
            let a = frontal_bbox(&k, &near).unwrap().clipped.area();
            let b = frontal_bbox(&k, &far).unwrap().clipped.area();
            prop_assert!(b <= a + 1e-9);
        }
    }
}
